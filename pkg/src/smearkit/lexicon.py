"""Fixed domain vocabularies backing question templates and synthetic data.

Everything here is versioned data, not logic: morphology phrasebooks per
subtype, the abnormality keyword lexicon, cohort diagnoses, and the distractor
condition pool for diagnosis questions.
"""

ABNORMALITY_KEYWORDS = (
    "hypolobated nuclei",
    "hyperlobated nuclei",
    "toxic granulation",
    "vacuolated cytoplasm",
    "membrane damage",
    "smudged chromatin",
    "oversized cell body",
    "band forms",
)

NUCLEUS_DESCRIPTIONS = {
    "Basophil": "a lobed nucleus obscured by dense granules",
    "Eosinophil": "a bilobed nucleus",
    "Lymphocyte": "a round, densely packed nucleus",
    "Monocyte": "a kidney-shaped, indented nucleus",
    "Neutrophil": "a segmented nucleus with multiple lobes",
}

CYTOPLASM_DESCRIPTIONS = {
    "Basophil": "coarse dark-violet granules",
    "Eosinophil": "coarse red-orange granules",
    "Lymphocyte": "a thin rim of agranular cytoplasm",
    "Monocyte": "abundant gray-blue cytoplasm",
    "Neutrophil": "fine pale-lilac granules",
}

ELEVATION_CONDITIONS = {
    "Basophil": "chronic myeloid disorders",
    "Eosinophil": "parasitic infection",
    "Lymphocyte": "viral infection",
    "Monocyte": "chronic inflammation",
    "Neutrophil": "acute bacterial infection",
}

NORMAL_RANGES = {
    "Basophil": "0 to 1 percent",
    "Eosinophil": "1 to 4 percent",
    "Lymphocyte": "20 to 40 percent",
    "Monocyte": "2 to 8 percent",
    "Neutrophil": "40 to 70 percent",
}

PRIMARY_ROLES = {
    "Basophil": "releasing histamine during allergic responses",
    "Eosinophil": "attacking parasites and damping allergic reactions",
    "Lymphocyte": "mounting adaptive immune responses",
    "Monocyte": "clearing debris and maturing into tissue macrophages",
    "Neutrophil": "engulfing bacteria at sites of acute infection",
}

COHORT_DIAGNOSES = ("anemia", "MDS", "control")

DIAGNOSIS_DISPLAY = {
    "anemia": "anemia",
    "MDS": "myelodysplastic syndrome (MDS)",
    "control": "control",
}

# Extra distractor conditions for diagnosis MCQs asking for > 3 options.
EXTRA_CONDITIONS = (
    "acute leukemia",
    "iron deficiency",
    "viral infection",
    "chronic inflammation",
)
