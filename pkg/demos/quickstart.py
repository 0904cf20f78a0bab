"""Run the filter over a short synthetic sequence and compare it with
per-frame measurements alone.

    python demos/quickstart.py [n_frames]
"""

import sys

from scfusion import PipelineConfig, SequenceConfig, run_sequence
from scfusion.pipeline import build_frames


def main(n_frames: int = 30) -> None:
    cfg = PipelineConfig(sequence=SequenceConfig(n_frames=n_frames))
    frames, K = build_frames(cfg)
    for mode in ("kalman", "measurement_only"):
        s = run_sequence(cfg.replace(fusion_mode=mode), frames, K).summary()
        print(
            f"{mode:>16}: median pose error {s['median_translation_m'] * 100:5.2f} cm / "
            f"{s['median_rotation_deg']:.2f} deg, mean coordinate error {s['coord_error_mean_m'] * 100:.2f} cm"
        )


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 30)
