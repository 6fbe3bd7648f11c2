"""Client/server protocol: PQC3 frames, sessions, and transports."""
from .frames import (
    DEFAULT_MAX_PAYLOAD,
    FRAME_OVERHEAD,
    Frame,
    MAGIC,
    ProtocolError,
    TYPE_CIPHERTEXT_BATCH,
    TYPE_ERROR,
    TYPE_EVAL_KEY,
    TYPE_PLAN,
    TYPE_RESULT,
    VERSION,
    decode_frame,
    encode_frame,
    max_payload_bytes,
    pack_error,
    pack_labeled_blobs,
    pack_result,
    unpack_error,
    unpack_labeled_blobs,
    unpack_result,
)
from .remote import RemoteAttentionModel
from .session import (
    ClientSession,
    ERR_BAD_ORDER,
    ERR_BAD_PAYLOAD,
    ERR_INTERNAL,
    ServerSession,
    StepResult,
)
from .transport import (
    InProcessTransport,
    TcpClient,
    TcpServer,
    recv_frame,
    send_frame,
)

__all__ = [
    "DEFAULT_MAX_PAYLOAD",
    "FRAME_OVERHEAD",
    "Frame",
    "MAGIC",
    "ProtocolError",
    "TYPE_CIPHERTEXT_BATCH",
    "TYPE_ERROR",
    "TYPE_EVAL_KEY",
    "TYPE_PLAN",
    "TYPE_RESULT",
    "VERSION",
    "decode_frame",
    "encode_frame",
    "max_payload_bytes",
    "pack_error",
    "pack_labeled_blobs",
    "pack_result",
    "unpack_error",
    "unpack_labeled_blobs",
    "unpack_result",
    "RemoteAttentionModel",
    "ClientSession",
    "ERR_BAD_ORDER",
    "ERR_BAD_PAYLOAD",
    "ERR_INTERNAL",
    "ServerSession",
    "StepResult",
    "InProcessTransport",
    "TcpClient",
    "TcpServer",
    "recv_frame",
    "send_frame",
]
