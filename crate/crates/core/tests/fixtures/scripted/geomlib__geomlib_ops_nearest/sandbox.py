import math
from dataclasses import dataclass


@dataclass
class Point:
    x: float
    y: float

    def dist(self, other):
        return math.hypot(self.x - other.x, self.y - other.y)


def nearest(points, target):
    best, best_d = None, math.inf
    for p in points:
        d = p.dist(target)
        if d < best_d:
            best, best_d = p, d
    return best
