"""
Support URLs.  Every table a task reads or writes is named by a URL so the
same task definitions work against any luigi target type.

Examples::

    /path/to/holoData/network.csv
    file:///path/to/holoData/lpr.csv
    mock://in-memory/table.csv
"""

import os
from urllib.parse import urlparse, urlunparse

import luigi
import luigi.format
import luigi.mock


class ExternalURL(luigi.ExternalTask):
    """Simple Task that returns a target based on its URL"""
    url = luigi.Parameter()

    def output(self):
        return get_target_from_url(self.url)


class UncheckedExternalURL(ExternalURL):
    """An ExternalURL task that does not verify if the source file exists, for optional inputs."""

    def complete(self):
        return True


DEFAULT_TARGET_CLASS = luigi.LocalTarget
URL_SCHEME_TO_TARGET_CLASS = {
    'file': luigi.LocalTarget,
    'mock': luigi.mock.MockTarget,
}


def get_target_from_url(url):
    """Returns a luigi target based on the url scheme"""
    parsed_url = urlparse(url)
    target_class = URL_SCHEME_TO_TARGET_CLASS.get(parsed_url.scheme, DEFAULT_TARGET_CLASS)
    if issubclass(target_class, luigi.LocalTarget):
        # LocalTarget expects a bare path, so strip the scheme and netloc.
        url = parsed_url.path

    url = url.rstrip('/')
    return target_class(url, format=luigi.format.UTF8)


def url_path_join(url, *extra_path):
    """
    Extend the path component of the given URL.  Relative paths extend the
    existing path, absolute paths replace it.  Special path elements like '.'
    and '..' are not treated any differently than any other path element.

    Examples:

        url=file:///data/holo, extra_path=lpr.csv -> file:///data/holo/lpr.csv
        url=/data/holo, extra_path=/tmp/out -> /tmp/out
        url=/data/holo, extra_path=../lpr.csv -> /data/holo/../lpr.csv

    Args:

        url (str): The URL to modify.
        extra_path (str): The path to join with the current URL path.

    Returns:
        The URL with the path component joined with `extra_path` argument.
    """
    (scheme, netloc, path, params, query, fragment) = urlparse(url)
    joined_path = os.path.join(path, *extra_path)
    return urlunparse((scheme, netloc, joined_path, params, query, fragment))
