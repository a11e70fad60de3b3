"""Render synthetic template scans and generate a labeled dataset on disk.

Writes a few sample scans to demo_out/ so you can eyeball them, then builds
a small dataset with the reference composition (97.36% correctly filled)
and shows that the classical pixel oracle recovers every label on clean
renders.
"""

from pathlib import Path

import numpy as np

from markgrid import (
    RenderSpec,
    generate_dataset,
    label_from_pixels,
    load_manifest,
    load_samples,
    make_sample,
    paper_like_composition,
)
from markgrid.synth import KINDS, NoiseModel, save_image

out = Path("demo_out")
out.mkdir(exist_ok=True)

spec = RenderSpec()
for kind in KINDS:
    record = make_sample(kind, spec, [42, hash(kind) % 1000])
    save_image(record.image, out / f"example_{kind}.png")
    print(f"{kind:15s} -> {out / f'example_{kind}.png'}")

# A 200-sample dataset at the reference composition.
composition = paper_like_composition(200)
print("\ncomposition:", composition)
manifest = generate_dataset(out / "dataset", 200, composition, spec, seed=7)
entries = load_manifest(manifest)
print("manifest lines:", len(entries))
print("first line fields:", entries[0])

# On noise-free renders, mean cell-interior intensity decodes the label
# exactly; this is the independent oracle the tests use against the network.
clean = RenderSpec(noise=NoiseModel(gaussian_sigma=0.0, salt_pepper=0.0))
generate_dataset(out / "clean", 50, paper_like_composition(50), clean, seed=8)
hits = 0
for image, label, kind in load_samples(out / "clean" / "manifest.tsv"):
    hits += label_from_pixels(np.asarray(image), clean) == label
print(f"\npixel oracle recovered {hits}/50 labels on clean renders")
