"""End to end: generate, train six models, fuse, evaluate across views.

The full recipe at miniature scale.  Six toy transformers -- three sizes
(small, base, large) for each of two modalities (RGB, depth) -- are
trained on front-view clips only.  Their per-clip class scores are fused
in two stages: first across sizes within a modality using weights
(0.4, 0.4, 0.2) for (large, base, small), then across modalities with
(0.65, 0.35) for (RGB, depth).  Evaluation is top-1 accuracy on the
held-out left and right camera views, which the models never saw.

Takes a few seconds on one CPU core; artifacts are left in a temporary
directory (printed below) for inspection.

Run:  python demos/05_full_pipeline.py
"""

import os
import tempfile

from cvislr import data, ensemble, train, vst

workdir = tempfile.mkdtemp(prefix="cvislr_demo_")
print(f"working under {workdir}")

print()
print("=== 1. Generate the cross-view dataset ===")

manifest = data.generate_dataset(num_classes=6, signers_per_class=3,
                                 geometry=(8, 32, 32),
                                 out_dir=os.path.join(workdir, "dataset"),
                                 seed=7)
for split in data.SPLITS:
    recs = manifest.split(split)
    print(f"  {split:>5}: {len(recs):3d} clips "
          f"({', '.join(sorted({r.view for r in recs}))})")

print()
print("=== 2. Train three sizes per modality on front-view clips ===")

cfg_train = train.TrainConfig(learning_rate=1e-3, epochs=20, batch_size=8,
                              seed=0)
predictions: dict[tuple[str, str], ensemble.PredictionSet] = {}
for modality in data.MODALITIES:
    for size in ("large", "base", "small"):
        model_cfg = vst.make_toy_config(size, manifest.num_classes,
                                        geometry=manifest.geometry)
        params = vst.init_params(model_cfg, seed=0)
        curve = train.train(model_cfg, params, manifest, cfg_train,
                            modality=modality)
        on_train = train.predict(model_cfg, params, manifest, "train",
                                 modality=modality)
        acc = train.evaluate(on_train, manifest, "train").accuracy
        predictions[size, modality] = train.predict(model_cfg, params,
                                                    manifest, "test",
                                                    modality=modality)
        print(f"  {size:>5}-{modality:<5}: loss {curve[0]:.3f} -> {curve[-1]:.3f}"
              f" over {len(curve)} epochs, train acc {acc:.2f}")

print()
print("=== 3. Two-stage fusion ===")

# Stage one: convex combination of softmax probabilities across sizes.
per_modality = {}
for modality in data.MODALITIES:
    fused = ensemble.single_modal_ensemble(
        [predictions["large", modality],
         predictions["base", modality],
         predictions["small", modality]],
        ensemble.DEFAULT_SIZE_WEIGHTS)
    per_modality[modality] = fused
    acc = train.evaluate(fused, manifest, "test").accuracy
    solo = {s: train.evaluate(predictions[s, modality], manifest, "test").accuracy
            for s in ("large", "base", "small")}
    print(f"  {modality:>5}: singles "
          + ", ".join(f"{s} {a:.2f}" for s, a in solo.items())
          + f" -> fused {acc:.2f}")

# Stage two: RGB and depth probabilities, 0.65 / 0.35.
final = ensemble.multimodal_ensemble(per_modality["rgb"], per_modality["depth"],
                                     ensemble.DEFAULT_MODALITY_WEIGHTS)
print(f"  provenance: {final.provenance}")

print()
print("=== 4. Cross-view evaluation ===")

report = train.evaluate(final, manifest, "test")
print(train.format_report(report))

print()
print("=== 5. Predictions on disk ===")

# Prediction sets serialize to a compact binary format; scores survive
# the f32 round trip bit for bit, so fused artifacts are reproducible
# byte for byte across runs.
pred_path = os.path.join(workdir, "final.pred")
ensemble.write_predictions(pred_path, final)
again = ensemble.read_predictions(pred_path)
print(f"wrote {pred_path!r} ({os.path.getsize(pred_path)} bytes, "
      f"{again.num_samples} samples x {again.num_classes} classes)")
print(f"argmax unchanged after round trip: "
      f"{(ensemble.argmax_predict(again) == ensemble.argmax_predict(final)).all()}")

print()
print("The cvislr command line drives the same pipeline from a shell:")
print("  cvislr gen-data --classes 6 --signers 3 --out dataset/")
print("  cvislr train --data dataset/ --size large --modality rgb "
      "--out large_rgb.vstc")
print("  cvislr predict --data dataset/ --checkpoint large_rgb.vstc "
      "--split test --out large_rgb.pred")
print("  cvislr ensemble --inputs l.pred b.pred s.pred --out rgb.pred")
print("  cvislr ensemble --rgb rgb.pred --depth depth.pred --out final.pred")
print("  cvislr evaluate --data dataset/ --pred final.pred")
