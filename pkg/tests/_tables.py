"""Per-layer parameter counts transcribed from the published architecture tables."""

ARCH_ROWS = {
    ("eeg", "medium"): dict(
        spatial_attention=552_960, linear_projection=49_051, subject_layer=32_761, blocks=1_578_320,
        conv1x1=270_616, temporal_aggregation=145, mse_head=867_840, clip_head=867_840,
    ),
    ("eeg", "large"): dict(
        spatial_attention=552_960, linear_projection=119_782, subject_layer=1_953_640, blocks=11_739_520,
        conv1x1=1_742_122, temporal_aggregation=145, mse_head=2_345_472, clip_head=2_345_472,
    ),
    ("meg", "medium"): dict(
        spatial_attention=552_960, linear_projection=13_550, subject_layer=2_500, blocks=60_800,
        conv1x1=20_452, temporal_aggregation=181, mse_head=235_008, clip_head=235_008,
    ),
    ("meg", "large"): dict(
        spatial_attention=552_960, linear_projection=107_316, subject_layer=627_264, blocks=7_539_840,
        conv1x1=1_433_347, temporal_aggregation=181, mse_head=2_168_832, clip_head=2_168_832,
    ),
    ("fmri", "medium"): dict(
        subject_layer=33_982_956, tr_layer=1_532_916, blocks=614_936, temporal_aggregation=6,
        linear_projection=850_944, mse_head=2_360_832, clip_head=0,
    ),
    ("fmri", "large"): dict(
        subject_layer=127_164_672, tr_layer=12_054_384, blocks=0, temporal_aggregation=6,
        linear_projection=2_385_408, mse_head=2_360_832, clip_head=2_363_904,
    ),
}

TOTALS = {
    ("eeg", "medium"): 4_219_533,
    ("eeg", "large"): 20_799_113,
    ("meg", "medium"): 1_120_459,
    ("meg", "large"): 14_598_572,
    ("fmri", "medium"): 39_342_590,
    ("fmri", "large"): 146_329_206,
}
