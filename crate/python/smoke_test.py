"""Quick end-to-end check of the ptyinr_py extension.

Build it first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math
import tempfile
from pathlib import Path

import ptyinr_py as pt


def main():
    cfg = {
        "phantom": {"kind": "blobs", "object_shape": [32, 32], "probe_shape": [16, 16], "seed": 1},
        "scan": {"step_pixels": 4},
        "train": {"steps": 30, "lr_object": 4e-4, "lr_probe": 1e-3},
        "networks": {
            "siren": {"hidden_layers": 2, "hidden_width": 32},
            "hashgrid": {"levels": 4, "table_size_log2": 10, "base_resolution": 4},
        },
        "epie": {"iterations": 20},
    }
    text = json.dumps(cfg)

    data = pt.simulate(text)
    print(data)
    assert len(data) == 25
    assert len(data.frame(0)) == 16 * 16

    recon = pt.reconstruct(data, text)
    losses = recon.loss_history
    assert len(losses) == 30 and all(math.isfinite(x) for x in losses)
    report = pt.evaluate(recon, data)
    assert "object_phase_psnr_db" in report
    print("ptyinr loss %.3e -> %.3e, phase PSNR %.2f dB" % (losses[0], losses[-1], report["object_phase_psnr_db"]))

    base = pt.epie(data, text)
    print("epie phase PSNR %.2f dB" % pt.evaluate(base, data)["object_phase_psnr_db"])

    truth = data.truth_object()
    rotated = [[z * complex(math.cos(-0.7), math.sin(-0.7)) for z in row] for row in truth]
    theta, _ = pt.align_phase(rotated, truth)
    assert abs(theta - 0.7) < 1e-5, theta

    assert pt.psnr([0.0, 0.1], [0.0, 0.0], 1.0) > 0
    assert abs(pt.count_params() - 3.1e6) / 3.1e6 < 0.05
    err = pt.gradcheck(samples=20)
    assert err < 1e-4, err

    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp) / "data"
        data.save(str(d))
        again = pt.Dataset.load(str(d))
        assert again.frame(3) == data.frame(3)
        r = Path(tmp) / "recon"
        recon.save(str(r))
        assert pt.Reconstruction.load(str(r)).loss_history == losses

    print("smoke test passed (version %s)" % pt.__version__)


if __name__ == "__main__":
    main()
