"""Communication Interface Identifier Protocol (CIIP) stack."""

from .adapter import Adapter, Datagram, ExternalAddress, LinkSend, MappingEntry
from .endpoint import Endpoint, EndpointConfig, EndpointRegisters
from .frame import Frame, FrameFlags, compute_checksum, decode_frame, encode_frame
from .netsim import Link, LinkConfig, SimClock, SplitMix64
from .registry import Registry, RegistryConfig, RegistryEntry

__version__ = "0.1.0"

__all__ = [
    "Adapter", "Datagram", "ExternalAddress", "LinkSend", "MappingEntry",
    "Endpoint", "EndpointConfig", "EndpointRegisters",
    "Frame", "FrameFlags", "compute_checksum", "decode_frame", "encode_frame",
    "Link", "LinkConfig", "SimClock", "SplitMix64",
    "Registry", "RegistryConfig", "RegistryEntry",
]
