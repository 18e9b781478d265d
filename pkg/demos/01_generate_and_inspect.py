"""Generate a tiny synthetic dataset and look at what is inside it.

Each sample pairs a point cloud (with soft per-point affordance labels)
with a few reference images that embed a glyph unique to the affordance —
the visual cue the model must learn to associate with the labeled region.
"""

import tempfile

import numpy as np

from mifag.data import GenConfig, load_pair, make_synthetic_dataset

out_dir = tempfile.mkdtemp(prefix="mifag_demo_")
config = GenConfig(num_samples=4, points_per_cloud=256, images_per_sample=2,
                   image_side=32, num_object_classes=6, num_affordances=17)
manifest = make_synthetic_dataset(config, seed=7, out_dir=out_dir)
print(f"wrote {len(manifest.entries)} samples under {out_dir}\n")

for entry in manifest.entries:
    pair = load_pair(manifest, entry)
    labels = pair.cloud.labels
    positive = labels > 0
    print(f"{entry.sample_id}: class={manifest.class_names[entry.object_class]}"
          f" affordance={manifest.affordance_names[entry.affordance]}")
    print(f"  points={len(labels)}  positive={positive.sum()}"
          f" ({100 * positive.mean():.0f}%)  label mean in region="
          f"{labels[positive].mean():.3f}")
    img = pair.refs.images[0]
    print(f"  image 0: shape={img.shape}  value range="
          f"[{img.min():.2f}, {img.max():.2f}]")

# Regeneration with the same seed is byte-identical — the generator derives
# every random draw from (seed, sample index) and fixed stream keys.
again = make_synthetic_dataset(config, seed=7,
                               out_dir=tempfile.mkdtemp(prefix="mifag_demo_"))
first = load_pair(manifest, manifest.entries[0]).cloud.coords
second = load_pair(again, again.entries[0]).cloud.coords
print(f"\nsame-seed regeneration identical: {np.array_equal(first, second)}")
