"""Top-down merging baseline.

The panoptic map is trusted as is; for partitionable classes the part map is
overlaid, and any pixel whose part prediction does not belong to the panoptic
class becomes VOID.
"""

from __future__ import annotations

import numpy as np

from jppf.errors import ShapeMismatch
from jppf.taxonomy import MAX_SEMANTIC, ClassTaxonomy, PanopticMap, PanopticPartMap, VOID_VALUE


def _ungroup_table(t: ClassTaxonomy) -> np.ndarray:
    """table[s, group_index] -> class-specific part id, 0 where undefined."""
    table = np.zeros((MAX_SEMANTIC + 1, len(t.part_groups)), np.uint32)
    for c, parts in t.class_parts.items():
        for k, g in enumerate(parts, start=1):
            table[c, t.part_channel(g)] = k
    return table


def merge_top_down(pan: PanopticMap, part_groups: np.ndarray, t: ClassTaxonomy) -> PanopticPartMap:
    """Overlay a grouped-part map (part group ids per pixel) onto a panoptic map."""
    part_groups = np.asarray(part_groups)
    if part_groups.shape != pan.shape:
        raise ShapeMismatch(f"part map {part_groups.shape} vs panoptic map {pan.shape}")
    lookup = {g: k for k, g in enumerate(t.part_groups)}
    unknown = set(np.unique(part_groups).tolist()) - set(lookup)
    if unknown:
        raise ShapeMismatch(f"part map holds unknown part groups {sorted(unknown)}")
    index = np.zeros(max(lookup) + 1, np.int64)
    for g, k in lookup.items():
        index[g] = k
    group_idx = index[part_groups]

    semantic = pan.semantic
    partitionable = np.zeros(MAX_SEMANTIC + 1, bool)
    partitionable[list(t.class_parts)] = True
    needs_part = partitionable[semantic] & ~pan.void_mask
    part_ids = _ungroup_table(t)[semantic, group_idx]

    labels = pan.labels & np.uint32(0xFFFFFF00)
    labels[needs_part] |= part_ids[needs_part]
    labels[needs_part & (part_ids == 0)] = VOID_VALUE
    return PanopticPartMap(labels)
