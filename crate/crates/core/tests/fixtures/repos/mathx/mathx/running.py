from dataclasses import dataclass, field


@dataclass
class RunningStats:
    values: list = field(default_factory=list)

    def push(self, x):
        self.values.append(x)
        return len(self.values)

    def mean(self):
        if not self.values:
            return 0.0
        return sum(self.values) / len(self.values)
