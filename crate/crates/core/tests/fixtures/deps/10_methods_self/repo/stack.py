class Stack:
    def __init__(self):
        self._items = []

    @classmethod
    def of(cls, values):
        s = Stack()
        for v in values:
            s.push(v)
        return s

    def push(self, v):
        self._items.append(v)
        self._check()

    def pop(self):
        self._check()
        return self._items.pop()

    def _check(self):
        if len(self._items) > 1000:
            raise OverflowError("stack too deep")
