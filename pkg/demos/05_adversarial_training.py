"""
Hardening a classifier with generated samples
=============================================

Each finetuning step pairs a clean batch with generator outputs for random
wrong targets, both labelled with the true class. Robustness is then probed
with MI-FGSM samples crafted against the original model.
"""

from manlab import attack, classifiers, datasets, defense, generator

data = datasets.make_synthetic(train_size=1000, test_size=200, seed=0)
raw = classifiers.build("resS-3", 10, data.spec.image_shape, seed=1)
classifiers.pretrain(raw, data, classifiers.PretrainConfig(epochs=2, batch_size=32, seed=1))
raw.freeze()

g = generator.build("manr", 10, data.spec.image_shape, seed=0)
attack.train(g, [raw], data.train, attack.AttackTrainConfig(alpha=1.0, iterations=200, seed=0))

hard = classifiers.build("resS-3", 10, data.spec.image_shape)
hard.load_state_dict(raw.state_dict())
defense.adv_finetune(hard, data.train, defense.AdvTrainConfig([g], iterations=100, batch_size=32, delta=0.5))
hard.freeze()

# %%
probe = defense.mi_fgsm_probe(raw, data.test, 0.5, count=100, seed=0)
for name, model in (("raw", raw), ("hardened", hard)):
    print(f"{name:9s} clean {classifiers.accuracy(model, data.test):.3f}  "
          f"attack success {defense.attack_success_robustness(model, probe.images, probe.targets):.3f}  "
          f"accuracy on probe {defense.classification_success_robustness(model, probe.images, probe.labels):.3f}")
