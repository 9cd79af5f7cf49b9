"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class RailTraceError(Exception):
    """Base class for all railtrace errors."""


class CoordinateOutOfRange(RailTraceError, ValueError):
    """Latitude or longitude is non-finite or outside WGS84 bounds."""


class InvalidGeometry(RailTraceError, ValueError):
    """Polyline violates its construction invariants."""


class InvalidRing(RailTraceError, ValueError):
    """Polygon ring is open, too short, or self-intersecting."""


class DuplicateLinkId(RailTraceError):
    """Two rail links share the same id."""


class SelfLoopLink(RailTraceError):
    """Both endpoints of a link welded to the same node."""

    def __init__(self, link_id: str):
        super().__init__(f"link {link_id!r} welds to a single node (self-loop)")
        self.link_id = link_id


class EmptyNetwork(RailTraceError):
    """No links remain after construction or filtering."""


class NodeNotOnLink(RailTraceError):
    """The given node is not an endpoint of the given link."""


class UnknownLink(RailTraceError):
    """A link id does not exist in the network."""


class ParseError(RailTraceError):
    """Base class for input-file errors."""


class MalformedRow(ParseError):
    """A CSV row failed validation."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingTimestamp(MalformedRow):
    """A photo observation row has no timestamp."""


class WrongShape(ParseError):
    """An OD matrix file is not a complete 5x5 numeric table."""


class NegativeVolume(ParseError):
    """An OD matrix entry is negative."""


class DuplicateRegionId(ParseError):
    """Two region features carry the same region_id."""


class UnsnappedTerminal(RailTraceError):
    """A terminal has no snapped link and cannot join the inference."""


class PointOutsideAllPadds(RailTraceError):
    """A gap endpoint is not covered by any PADD region polygon."""


class MissingStageInput(RailTraceError):
    """A pipeline stage was run before the stage it depends on."""


class InvalidConfig(RailTraceError):
    """The pipeline config file is malformed or incomplete."""
