from graphrepo.core import helper as exported_helper
