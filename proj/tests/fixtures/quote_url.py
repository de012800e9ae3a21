import six
from urllib.parse import quote, quote_plus


def quote_url(url_text):
    (scheme, netloc, path, params, query, fragment) = six.moves.urllib.parse.urlparse(url_text)
    # netloc_quoted = quote(netloc)
    path_quoted = quote(path)
    params_quoted = quote(params)
    query_quoted = quote_plus(query)
    fragment_quoted = quote(fragment)
    url_quoted = six.moves.urllib.parse.urlunparse((scheme, netloc, path_quoted, params_quoted, query_quoted, fragment_quoted))
    return url_quoted
