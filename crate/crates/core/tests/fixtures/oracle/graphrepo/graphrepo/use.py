from graphrepo import exported_helper


def via_reexport(x):
    return exported_helper(x) + 1
