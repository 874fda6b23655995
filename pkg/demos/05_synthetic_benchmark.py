"""A synthetic scene/description corpus with a known share of wrong pairs."""

import numpy as np

from ptmatch import synthgen

spec = synthgen.GeneratorSpec(num_scenes=50, texts_per_scene=4, seed=3)
ds, splits = synthgen.build_benchmark(spec, noise_rate=0.2)
print({k: len(v) for k, v in splits.items()}, "scenes;", len(ds.texts), "texts")
print("mismatched training pairs:", len(ds.noisy_text_ids()))

t = ds.texts[0]
print(t.id, "is assigned to", t.scene_id, "and truly describes", ds.clean_map[t.id])

# a text echoes a subset of its scene's objects: count near-copies
scene = ds.scenes[ds.scene_index(ds.clean_map[t.id])]
d = np.linalg.norm(t.features.Z[:, None] - scene.features.Z[None], axis=-1).min(axis=1)
print("distance of each text token to its nearest scene patch:", np.round(d, 2))
