from .aggregator import SlotAttention
from .decoder import BroadcastDecoder
from .transitioner import OffsetError, Transitioner
from .video import (
    SlotState,
    VideoSlotModel,
    aggregate,
    attention_masks,
    build_model,
    decode,
    init_parameters,
    objective,
    transit_baseline,
    transit_randsfq,
)

__all__ = [
    "SlotAttention", "BroadcastDecoder", "OffsetError", "Transitioner", "SlotState", "VideoSlotModel",
    "aggregate", "attention_masks", "build_model", "decode", "init_parameters", "objective",
    "transit_baseline", "transit_randsfq",
]
