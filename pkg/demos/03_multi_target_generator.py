"""
Training a multi-target generator
=================================

One generator, many targets: the target label is fed in at inference time
and the network produces x* for that class. At test time the perturbation
x* - x is rescaled to an L2 budget epsilon = delta * sqrt(N).
"""

import numpy as np

from manlab import attack, classifiers, datasets, evaluation, generator

data = datasets.make_synthetic(train_size=1000, test_size=200, seed=0)
victim = classifiers.build("vggS", 10, data.spec.image_shape, seed=0)
classifiers.pretrain(victim, data, classifiers.PretrainConfig(epochs=2, batch_size=32))
victim.freeze()

g = generator.build("manr", 10, data.spec.image_shape, seed=0)
res = attack.train(g, [victim], data.train, attack.AttackTrainConfig(alpha=1.0, iterations=300, seed=0))
last = res.reports[-1]
print(f"after {len(res.reports)} steps: L={last.loss:.3f} L_cls={last.l_cls:.3f} L_re={last.l_re:.3f}")

# %%
# The budget. Pixels live in [0, 1], so delta is a per-pixel magnitude on
# that scale; pass pixel_scale=255 to express delta in 8-bit units instead.
budget = attack.AttackBudget(0.5, 28 * 28)
print("delta 0.5 ->", budget.epsilon, "| delta 0.5 of 255 ->", attack.AttackBudget(0.5, 784, 255).input_epsilon)

x = data.test.images[:4]
x_star = generator.generate(g, x, 7)
scaled = attack.scale_perturbation(x, x_star, budget.epsilon)
print("raw norms", scaled.raw_norm.round(2), "-> clamped", scaled.clamped_norm.round(2))
print("victim says", classifiers.predict_labels(victim, scaled.images), "for target 7")

# %%
# Success rate over every (image, other class) pair.
for delta in (0.25, 0.5, 1.0):
    r = evaluation.success_rate(g, victim, data.test, evaluation.EvalProtocol("multi_all", delta))
    print(f"delta {delta}: success {r.rate:.3f} on {r.pairs} pairs, label accuracy {r.label_accuracy:.3f}")

# The generator settles on raw perturbations of norm ~6 here. Budgets well
# above that stretch the perturbation past what it was trained to produce,
# clamping eats the excess, and success falls as delta grows.
