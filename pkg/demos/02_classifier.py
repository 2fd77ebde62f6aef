"""
Pretraining a victim classifier
===============================

The attack needs a frozen classifier to aim at. Here a vggS is fit to the
synthetic blob dataset, which trains in seconds; swap in
``datasets.load("mnist", "<dir with IDX files>")`` for real digits.
"""

import tempfile
from pathlib import Path

from manlab import classifiers, datasets

data = datasets.make_synthetic(train_size=1000, test_size=200, seed=0)
print(data.spec)

model = classifiers.build("vggS", data.spec.num_classes, data.spec.image_shape, seed=0)
out = Path(tempfile.mkdtemp()) / "vggS.ckpt"
result = classifiers.pretrain(model, data, classifiers.PretrainConfig(epochs=2, batch_size=32, checkpoint=str(out)))
print("test accuracy by epoch:", [round(a, 3) for a in result.curve])

# %%
# Checkpoints round-trip exactly, and a loaded model comes back frozen:
# eval-mode batch norm and no gradient accumulation into its weights.
frozen = classifiers.load(out)
print("frozen:", frozen.frozen, "| same weights:", frozen.fingerprint() == model.fingerprint())
print("accuracy after reload:", classifiers.accuracy(frozen, data.test))

# residual variants are named resS-<blocks>
res = classifiers.build("resS-3", 10, data.spec.image_shape, seed=1)
print("resS-3 parameters:", sum(p.data.size for p in res.parameters()))
