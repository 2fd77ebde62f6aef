"""
Transfer to unseen classifiers
==============================

A generator trained against one model is scored against several. Cells
whose victim was in the attacked ensemble are white-box; the rest measure
transferability.
"""

from manlab import attack, classifiers, datasets, evaluation, generator

data = datasets.make_synthetic(train_size=1000, test_size=200, seed=0)
victims = {}
for name, arch, seed in (("vggS", "vggS", 0), ("resS-3", "resS-3", 1)):
    m = classifiers.build(arch, 10, data.spec.image_shape, seed=seed)
    classifiers.pretrain(m, data, classifiers.PretrainConfig(epochs=2, batch_size=32, seed=seed))
    victims[name] = m.freeze()

g = generator.build("manr", 10, data.spec.image_shape, seed=0)
attack.train(g, [victims["vggS"]], data.train, attack.AttackTrainConfig(alpha=1.0, iterations=300, seed=0))

report = evaluation.transfer_matrix(
    {"manr@vggS": g}, victims, data.test, evaluation.EvalProtocol("multi_all", 0.5),
    ensembles={"manr@vggS": ["vggS"]},
)
for cell in report.cells:
    kind = "white-box" if cell.white_box else "black-box"
    print(f"{cell.generator} -> {cell.victim:7s} {kind}: {cell.rate:.3f} over {cell.pairs} pairs")
