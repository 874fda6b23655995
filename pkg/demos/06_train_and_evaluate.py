"""Train on noisy pairs with three losses and compare retrieval on held-out scenes."""

from ptmatch import evalkit, formats, synthgen, trainer

ds, splits = synthgen.build_benchmark(synthgen.GeneratorSpec(seed=1), noise_rate=0.4)
train = formats.split_subset(ds, splits, "train")
val = formats.split_subset(ds, splits, "val")
test = formats.split_subset(ds, splits, "test")
print(len(train.noisy_text_ids()), "of", len(train.texts), "training pairs are wrong")

for loss in ("contrastive", "complementary", "rnc"):
    cfg = trainer.TrainConfig(loss=loss, seed=1, epochs=30)
    params, log = trainer.train(train, val, cfg)
    m = evalkit.evaluate(test, params, cfg.dap_config())
    print(f"{loss:14s} last epoch loss {log.records[-1].mean_loss:.4f}  test {m.summary()}")

# which tokens a trained model looks at in one description
rec = evalkit.attention_dump(test.texts[0].features, params, cfg.dap_config(), test.texts[0].id)
print(rec["id"], [round(w, 3) for w in rec["token_weights"]])
