from typing import Dict, Iterable, List


class Interner:
    """Bijection between opaque string ids and dense integers (0..n-1, first-seen order)"""

    __slots__ = ("_ids", "_names")

    def __init__(self, names: Iterable[str] = ()):
        self._ids: Dict[str, int] = {}
        self._names: List[str] = []
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id_of(self, name: str) -> int:
        """Lookup without interning; raises KeyError for unseen names"""
        return self._ids[name]

    def extern(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> List[str]:
        return list(self._names)

    def __contains__(self, name: object) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __repr__(self):
        return f"<Interner(size={len(self._names)})>"
