import unittest  # pylint: disable=unused-import
