"""Cortical region table: 35 Desikan protocol regions per hemisphere.

Serialisation order is left hemisphere first, regions in protocol (colour
table) order within each hemisphere.  Region index ``r`` in 0..69 maps to
``REGIONS[r]``.
"""

DESIKAN_35 = (
    "bankssts",
    "caudalanteriorcingulate",
    "caudalmiddlefrontal",
    "corpuscallosum",
    "cuneus",
    "entorhinal",
    "fusiform",
    "inferiorparietal",
    "inferiortemporal",
    "isthmuscingulate",
    "lateraloccipital",
    "lateralorbitofrontal",
    "lingual",
    "medialorbitofrontal",
    "middletemporal",
    "parahippocampal",
    "paracentral",
    "parsopercularis",
    "parsorbitalis",
    "parstriangularis",
    "pericalcarine",
    "postcentral",
    "posteriorcingulate",
    "precentral",
    "precuneus",
    "rostralanteriorcingulate",
    "rostralmiddlefrontal",
    "superiorfrontal",
    "superiorparietal",
    "superiortemporal",
    "supramarginal",
    "frontalpole",
    "temporalpole",
    "transversetemporal",
    "insula",
)

HEMISPHERES = ("lh", "rh")

# (hemisphere, name) for region indices 0..69
REGIONS = tuple((hemi, name) for hemi in HEMISPHERES for name in DESIKAN_35)

N_REGIONS = len(REGIONS)


def region_label(index: int) -> str:
    hemi, name = REGIONS[index]
    return f"{hemi}.{name}"
