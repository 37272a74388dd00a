"""Set-based routing model: routes, origins, upstreams and conflict classes.

A route is an AS path (observer first, origin last) paired with an IPv4
prefix. A RibView is an immutable set of routes; every query here is a pure
function over it.
"""

import ipaddress
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from hijackvet.core.errors import AsPathError, PrefixError

Prefix = ipaddress.IPv4Network
Path = Tuple["Asn", ...]

MAX_ASN = 2**32 - 1


class Asn(int):
    """A 32-bit autonomous system number (strictly positive)."""

    def __new__(cls, value):
        if isinstance(value, str):
            text = value.strip().upper()
            if text.startswith("AS"):
                text = text[2:]
            try:
                value = int(text)
            except ValueError:
                raise AsPathError(f"Invalid AS number: '{value}'")
        number = int(value)
        if number <= 0 or number > MAX_ASN:
            raise AsPathError(f"AS number out of range: {number}")
        return super().__new__(cls, number)

    def __repr__(self) -> str:
        return f"AS{int(self)}"

    def __str__(self) -> str:
        return str(int(self))


def parse_prefix(text) -> Prefix:
    """
    Parse an IPv4 prefix in CIDR notation.

    Args:
        text: Prefix string (e.g. '10.1.0.0/16') or an IPv4Network

    Returns:
        IPv4Network with host bits zero

    Raises:
        PrefixError: If the text is not a valid IPv4 prefix
    """
    if isinstance(text, ipaddress.IPv4Network):
        return text
    try:
        return ipaddress.IPv4Network(str(text).strip(), strict=True)
    except (ipaddress.AddressValueError, ipaddress.NetmaskValueError, ValueError) as e:
        raise PrefixError(f"Invalid IPv4 prefix '{text}': {e}")


def parse_path(tokens: Iterable) -> Path:
    """
    Parse AS path tokens into a tuple of Asn.

    AS_SET segments (written '{a,b}') are rejected since the model has no
    semantics for unordered path segments.

    Raises:
        AsPathError: On AS_SET segments or invalid AS numbers
    """
    path = []
    for token in tokens:
        text = str(token)
        if "{" in text or "}" in text or "," in text:
            raise AsPathError(f"AS_SET segment not supported: '{text}'")
        path.append(Asn(text))
    return tuple(path)


def collapse_path(path: Sequence) -> Path:
    """Remove consecutive repeats (path prepending) from an AS path."""
    return tuple(Asn(asn) for asn, _ in itertools.groupby(path))


@dataclass(frozen=True)
class Route:
    """An AS path towards a prefix. Equality is (collapsed path, prefix)."""

    path: Path
    prefix: Prefix
    raw_path: Path = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.path:
            raise AsPathError(f"Route to {self.prefix} has an empty AS path")

    @classmethod
    def from_path(cls, path: Sequence, prefix) -> "Route":
        """Build a route from a raw (possibly prepended) path."""
        raw = tuple(Asn(asn) for asn in path)
        return cls(path=collapse_path(raw), prefix=parse_prefix(prefix), raw_path=raw)

    @property
    def origin(self) -> Asn:
        return self.path[-1]

    @property
    def upstream(self) -> Optional[Asn]:
        return self.path[-2] if len(self.path) >= 2 else None

    def __len__(self) -> int:
        return len(self.path)


@dataclass(frozen=True)
class RibView:
    """A set of active routes, optionally tagged with its observation point."""

    routes: FrozenSet[Route] = frozenset()
    observer: Optional[Asn] = None

    @classmethod
    def of(cls, routes: Iterable[Route], observer: Optional[int] = None) -> "RibView":
        return cls(
            routes=frozenset(routes),
            observer=Asn(observer) if observer is not None else None,
        )

    def merge(self, routes: Iterable[Route]) -> "RibView":
        """Return a new view with additional routes."""
        return RibView(routes=self.routes | frozenset(routes), observer=self.observer)

    def prefixes(self) -> Set[Prefix]:
        return {route.prefix for route in self.routes}

    def routes_to(self, p: Prefix) -> List[Route]:
        return [route for route in self.routes if route.prefix == p]

    def __len__(self) -> int:
        return len(self.routes)


class ConflictClass(Enum):
    """Conflict classes, ordered by severity."""

    NO_CONFLICT = 0
    MOAS = 1
    SUB_MOAS = 2
    STRICT_SUB_MOAS = 3


@dataclass(frozen=True)
class ImpactReport:
    """Which of the three impact conditions a forged route set satisfies."""

    unrivaled: bool
    globally_shortest: bool
    most_specific: bool


@dataclass(frozen=True)
class BoundViolation:
    """A prefix seen through more routes than the observer has neighbors."""

    observer: Asn
    prefix: Prefix
    route_count: int
    bound: int


def is_subprefix(child: Prefix, parent: Prefix) -> bool:
    """True iff child is strictly more specific than parent and inside it."""
    return child.prefixlen > parent.prefixlen and child.subnet_of(parent)


def _covers(parent: Prefix, child: Prefix) -> bool:
    return parent == child or is_subprefix(child, parent)


def origins(rib: RibView, p: Prefix) -> Set[Asn]:
    """Origin ASes of routes announcing exactly p."""
    return {route.origin for route in rib.routes if route.prefix == p}


def origins_covering(rib: RibView, p: Prefix) -> Set[Asn]:
    """Origin ASes of routes announcing p or any less specific prefix of p."""
    return {route.origin for route in rib.routes if _covers(route.prefix, p)}


def upstreams(rib: RibView, o: Asn) -> Set[Asn]:
    """Upstream neighbors of o: the AS adjacent to o on every route o originates."""
    return {
        route.upstream
        for route in rib.routes
        if route.origin == o and route.upstream is not None
    }


def classify_conflict(rib: RibView, candidate: Route) -> ConflictClass:
    """
    Classify the conflict a new route would create against a RIB.

    Args:
        rib: Current set of active routes
        candidate: Route not yet in rib

    Returns:
        The most severe applicable class (StrictSubMoas > SubMoas > Moas)
    """
    p = candidate.prefix
    origin = candidate.origin

    exact = origins(rib, p)
    moas = bool(exact) and origin not in exact

    sub_moas = any(
        is_subprefix(p, q) and origin not in origins_covering(rib, q)
        for q in rib.prefixes()
    )

    if sub_moas and not exact:
        return ConflictClass.STRICT_SUB_MOAS
    if sub_moas:
        return ConflictClass.SUB_MOAS
    if moas:
        return ConflictClass.MOAS
    return ConflictClass.NO_CONFLICT


def _single_target(forged: Iterable[Route]) -> Tuple[Prefix, List[Route]]:
    routes = list(forged)
    if not routes:
        raise ValueError("Forged route set must not be empty")
    targets = {route.prefix for route in routes}
    if len(targets) != 1:
        raise ValueError(
            f"Forged routes span {len(targets)} prefixes; expected exactly one"
        )
    return targets.pop(), routes


def impact_conditions(rib: RibView, forged: Iterable[Route]) -> ImpactReport:
    """
    Evaluate the three impact conditions of a forged route set.

    Raises:
        ValueError: If forged is empty or spans multiple prefixes
    """
    target, routes = _single_target(forged)

    covering = [route for route in rib.routes if _covers(route.prefix, target)]
    unrivaled = not covering

    longest_forged = max(len(route) for route in routes)
    globally_shortest = all(longest_forged < len(route) for route in covering)

    most_specific = not any(_covers(target, route.prefix) for route in rib.routes)

    return ImpactReport(
        unrivaled=unrivaled,
        globally_shortest=globally_shortest,
        most_specific=most_specific,
    )


def inject_prefix_hijack(
    rib: RibView,
    attacker: Asn,
    attacker_upstreams: Set[Asn],
    victim_prefix: Prefix,
    observer_subpaths: Set[Path],
) -> Set[Route]:
    """
    Forge routes originating the victim's exact prefix at the attacker.

    The rib is not modified; callers merge the returned routes.

    Raises:
        ValueError: If attacker_upstreams is empty
    """
    if not attacker_upstreams:
        raise ValueError("Attacker needs at least one upstream")
    subpaths = observer_subpaths or {()}
    return {
        Route.from_path(tuple(w) + (u, attacker), victim_prefix)
        for w in subpaths
        for u in attacker_upstreams
    }


def inject_subprefix_hijack(
    rib: RibView,
    attacker: Asn,
    attacker_upstreams: Set[Asn],
    victim_prefix: Prefix,
    split_depth: int,
    observer_subpaths: Set[Path],
) -> Set[Route]:
    """
    Forge routes for every subprefix split_depth bits below the victim prefix.

    The forged prefixes exactly cover the victim prefix.

    Raises:
        ValueError: If split_depth < 1 or the split exceeds 32 bits
    """
    if split_depth < 1:
        raise ValueError(f"split_depth must be >= 1, got {split_depth}")
    if victim_prefix.prefixlen + split_depth > 32:
        raise ValueError(
            f"Cannot split {victim_prefix} by {split_depth} bits: exceeds /32"
        )
    forged: Set[Route] = set()
    for subprefix in victim_prefix.subnets(prefixlen_diff=split_depth):
        forged |= inject_prefix_hijack(
            rib, attacker, attacker_upstreams, subprefix, observer_subpaths
        )
    return forged


def check_best_path_bound(
    observed: RibView, rib_global: RibView
) -> List[BoundViolation]:
    """
    Flag prefixes an observer sees through more routes than it has neighbors.

    Args:
        observed: Routes seen from a single observation point (observer set)
        rib_global: Global route set used to derive the observer's neighbors

    Raises:
        ValueError: If observed carries no observer tag
    """
    if observed.observer is None:
        raise ValueError("Best-path bound needs an observer-tagged RibView")
    bound = len(upstreams(rib_global, observed.observer))

    counts: Dict[Prefix, int] = {}
    for route in observed.routes:
        counts[route.prefix] = counts.get(route.prefix, 0) + 1

    return [
        BoundViolation(observed.observer, prefix, count, bound)
        for prefix, count in sorted(counts.items(), key=lambda item: item[0])
        if count > bound
    ]
