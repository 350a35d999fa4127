from .digits import render_digits
from .idx import (ConsistencyError, IdxFormatError, load_idx, read_idx, read_images, read_labels,
                  save_idx, write_idx)
from .sampling import (BalancedBatch, balanced_batches, balanced_epoch, balanced_epoch_length,
                       source_epoch)
from .sets import DomainPair, LabeledSet, UnlabeledSet, make_domain_pair, split
from .shifts import ShiftSpec, apply_shift, color_field, to_channels

__all__ = [
    "render_digits", "ConsistencyError", "IdxFormatError", "load_idx", "read_idx", "read_images",
    "read_labels", "save_idx", "write_idx", "BalancedBatch", "balanced_batches", "balanced_epoch",
    "balanced_epoch_length", "source_epoch", "DomainPair", "LabeledSet", "UnlabeledSet",
    "make_domain_pair", "split", "ShiftSpec", "apply_shift", "color_field", "to_channels",
]
