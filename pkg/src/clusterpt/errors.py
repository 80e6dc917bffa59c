"""Exception taxonomy. Specific failures get specific types so callers and
tests can tell a malformed wire frame from a bad merge or a stale update."""


class ClusterError(Exception):
    """Base class for all clusterpt errors."""


class SceneError(ClusterError):
    """Scene file or scene state fails validation."""


class StaleUpdateError(SceneError):
    """Scene update carries a frame time older than the scene's."""


class TopologyError(ClusterError):
    """BVH refit attempted against a mesh with different topology."""


class PlanError(ClusterError):
    """Work distribution constraints violated (divisibility, counts)."""


class MergeError(ClusterError):
    """Partial buffers cannot be merged (missing, mismatched, duplicated)."""


class PipelineError(ClusterError):
    """A pipeline stage failed; carries the frame id being processed."""

    def __init__(self, message: str, frame_id: int | None = None):
        super().__init__(message)
        self.frame_id = frame_id


class ProtocolError(ClusterError):
    """Base class for wire protocol violations."""


class BadMagic(ProtocolError):
    """Frame does not start with the protocol magic."""


class UnknownMessageType(ProtocolError):
    """Envelope carries a type tag outside the message registry."""


class OversizePayload(ProtocolError):
    """Declared payload length exceeds the hard cap."""


class IncompleteFrame(ProtocolError):
    """Byte stream ended mid-frame. Streaming decoders treat this as
    'need more data'; whole-buffer decoders raise it."""


class PayloadMismatch(ProtocolError):
    """Payload length or internal field lengths are inconsistent."""


class HandshakeError(ProtocolError):
    """HELLO exchange failed (bad role, version mismatch)."""
