"""Create a small blinded ranking study from synthetic volumes, play back two
raters programmatically, and export the unblinded rank table.

Run:  python3 demos/survey_walkthrough.py
The script leaves a ready-to-serve study in ./demo_survey/; point the service
at it to rate the remaining queries in a browser:

    synth7t survey serve --store demo_survey/store.jsonl \
        --images-dir demo_survey/images --frontend frontend/dist --port 8780
    # then open http://127.0.0.1:8780/?study=demo&rater=you
"""

from pathlib import Path

import numpy as np
import pandas as pd

from synth7t.nifti import write_nifti
from synth7t.survey import SurveyStore, create_study

VARIANTS = ["3T", "7T", "unet7T", "gan7T"]
CRITERIA = ["Rank based on how good the image looks.",
            "Rank based on how detailed the image is."]


def main():
    root = Path("demo_survey")
    root.mkdir(exist_ok=True)
    rng = np.random.default_rng(0)

    print("1. Write aligned variant volumes and a manifest")
    rows = []
    for i, variant in enumerate(VARIANTS):
        data = np.clip(rng.random((24, 24, 10)) * 0.4 + i * 0.12, 0, 1).astype(np.float32)
        path = root / f"{variant}.nii.gz"
        write_nifti(path, data)
        rows += [{"subject_id": f"s{j}", "variant": variant, "image_path": str(path)}
                 for j in range(6)]
    manifest = root / "manifest.csv"
    pd.DataFrame(rows).to_csv(manifest, index=False)

    print("2. Create a 6-query blinded study (seeded, reproducible)")
    store_path = root / "store.jsonl"
    if store_path.exists():
        store_path.unlink()
    study = create_study(manifest, n_queries=6, criteria=CRITERIA, seed=0,
                         images_root=root / "images", study_id="demo")
    store = SurveyStore(store_path)
    store.add_study(study)
    print(f"   study {study.study_id}: {len(study.queries)} queries x {study.k} variants")

    print("3. Play back two raters who both prefer the synthetic images")
    preference = {v: i + 1 for i, v in enumerate(["gan7T", "unet7T", "7T", "3T"])}
    for rater in ("alice", "bob"):
        for query in study.queries:
            ranks = {label: preference[query.label_to_variant[label]]
                     for label in query.labels}
            for ci in range(len(CRITERIA)):
                store.submit_ranking("demo", rater, query.query_id, ci, ranks)

    print("4. Export the unblinded rank table")
    table = store.export_ranks("demo")
    print(table.groupby("image_type")["rank"].mean().sort_values().to_string())
    print(f"\n   {len(table)} rows exported; store persisted at {store_path}")


if __name__ == "__main__":
    main()
