"""Central finite differences against the analytic backward pass.

The full suite (``cotnet gradcheck --ops all``) takes about a minute; this
demo runs a representative subset with two seeds.
"""
from cotnet.gradcheck import grad_check, run_suite

for report in run_suite(["conv2d_grouped", "batch_norm2d_train", "local_aggregate", "lsa_forward", "cot_full"],
                        seeds=range(2)):
    print(report.line())

# %% Any composite function of float64 tensors can be checked the same way.
import numpy as np  # noqa: E402

from cotnet import Tensor  # noqa: E402
from cotnet import functional as F  # noqa: E402

rng = np.random.default_rng(0)
x, w = Tensor(rng.normal(size=(2, 3, 5, 5))), Tensor(rng.normal(size=(4, 3, 3, 3)))
print(grad_check(lambda: F.pool2d(F.relu(F.conv2d(x, w, padding=1)), "max", 2, 2),
                 {"x": x, "w": w}, name="conv-relu-maxpool").line())
