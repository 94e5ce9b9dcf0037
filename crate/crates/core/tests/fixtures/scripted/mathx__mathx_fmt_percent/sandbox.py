import tinyfmt


def percent(x, digits=1):
    return tinyfmt.fixed(x * 100, digits) + "%"
