"""Rebuild the frozen golden values (run only when a format change is intended).

The MLP output is computed with straight-line numpy, not with latentflow's
tape, so the frozen file is an independent reference for the forward pass.
"""

import json
from pathlib import Path

import numpy as np

from latentflow.ndtensor import Rng
from latentflow.networks import Mlp

HERE = Path(__file__).parent


def main():
    first = Rng(42).normal((8,)).tolist()
    mlp = Mlp("m", [3, 5, 4, 2], ["tanh", "softplus", "sigmoid"])
    p = mlp.init(Rng(7))
    x = np.array([[0.5, -1.0, 2.0], [0.0, 0.3, -0.7]])
    h = np.tanh(x @ p["m.W0"] + p["m.b0"])
    h = np.log(1 + np.exp(h @ p["m.W1"] + p["m.b1"]))
    out = 1 / (1 + np.exp(-(h @ p["m.W2"] + p["m.b2"])))
    golden = {
        "normal_seed42_first8": first,
        "mlp_input": x.tolist(),
        "mlp_params": {k: v.tolist() for k, v in p.items()},
        "mlp_output": out.tolist(),
    }
    (HERE / "ndtensor.json").write_text(json.dumps(golden, indent=1))


if __name__ == "__main__":
    main()
