"""Export a prediction heatmap (PLY + CSV) and the query-token embeddings.

The PLY is viewable in any point-cloud viewer (blue = cold, red = hot);
the query CSV is shaped for external projection tools (t-SNE, UMAP) to
inspect how the token dictionary organizes by affordance.
"""

import csv
import tempfile

from mifag.data import GenConfig, make_synthetic_dataset
from mifag.harness import (TrainConfig, export_queries, predict, train)

config = TrainConfig(learning_rate=2e-3, batch_size=2, epochs=5, max_steps=5,
                     n_images=2, iam_layers=2, tokens=4, channels=16,
                     heads=2, image_side=16, num_points=128,
                     stage_points=(32, 16, 8), stage_hidden=(16, 16, 16),
                     neighbors=8, num_affordances=17, num_object_classes=6,
                     deterministic=True).validate()

gen = GenConfig(num_samples=2, points_per_cloud=config.num_points,
                images_per_sample=2, image_side=config.image_side,
                num_object_classes=config.num_object_classes,
                num_affordances=config.num_affordances)
out = tempfile.mkdtemp(prefix="mifag_demo_")
manifest = make_synthetic_dataset(gen, seed=2, out_dir=f"{out}/data")
_, _, checkpoint = train(config, manifest, f"{out}/run")

sample_id = manifest.entries[0].sample_id
ply_path, csv_path = predict(checkpoint, manifest, sample_id, f"{out}/pred")
with open(ply_path) as f:
    head = [next(f).strip() for _ in range(12)]
print("PLY header + first vertices:")
print("\n".join(f"  {line}" for line in head))

rows = export_queries(checkpoint, manifest, f"{out}/queries.csv")
with open(f"{out}/queries.csv") as f:
    header = next(csv.reader(f))
print(f"\nquery export: {rows} rows, {len(header)} columns")
print(f"  columns: {', '.join(header[:5])}, ... {header[-1]}")
print(f"\nartifacts under {out}")
