#!/usr/bin/env python3
"""Regenerate the bundled mini-corpus fixture under tests/data/minicorpus/.

Layout (all counts are construction-guaranteed and asserted below):
  - 60 posts: p001..p057 original, r058..r060 reposts (3).
  - 40 images: img001..img038 static PNGs (2 per post for p001..p019),
    img039/img040 animated GIFs on p020. 38 static total.
  - 45 distinct users.
  - originals span 2021-12-09 .. 2022-01-24 in UTC+8 (47 daily buckets).
  - static images fall into 4 visual patterns (10/10/10/8), one pattern
    per post; image_themes.csv is the oracle/gold theme per static image.
  - info/emotion prediction CSVs cover p001..p050 (50 of 57 originals).
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from PIL import Image

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "minicorpus"

TZ8 = timezone(timedelta(hours=8))
START = datetime(2021, 12, 9, 8, 0, 0, tzinfo=TZ8)
SPAN_DAYS = 46  # inclusive range 2021-12-09 .. 2022-01-24 -> 47 buckets

PATTERN_THEMES = ["Posters", "TextImages", "OutdoorScenes", "Food"]
INFO = ["SituationalInformation", "AttitudeDisclosure", "LifeRecording", "LatestPolicies"]
EMOTION = ["Hopeful", "Appreciative", "Neutral", "Annoyed", "Anxious"]

TEXTS = [
    "西安疫情 latest update: new cases reported in the city today",
    "stay strong 西安加油, we will get through the lockdown together",
    "today's quarantine dinner, noodles again 隔离生活",
    "empty streets near the bell tower 封城 quiet morning",
    "community notice: nucleic acid test round starts tomorrow 核酸检测",
    "thank you to all the medical staff working overnight 医护人员辛苦了",
    "supply box arrived, vegetables and rice 物资",
    "press conference at 10am on epidemic prevention 新闻发布会",
]


def post_date(i: int) -> datetime:
    if i == 1:
        return START
    if i == 57:
        return START.replace(hour=20) + timedelta(days=SPAN_DAYS)
    # pseudo-spread across days 1..44, leaving day 45 (2022-01-23) empty so
    # the temporal series has a zero-filled gap inside the span
    return START + timedelta(days=1 + ((i * 7) % (SPAN_DAYS - 2)), hours=i % 12)


def pattern_block(pattern: int, noise: np.random.Generator) -> np.ndarray:
    px = np.zeros((16, 16, 3), dtype=np.float64)
    if pattern == 0:  # poster-like: red field, light band on top
        px[:, :] = (205.0, 40.0, 45.0)
        px[:4, :] = (240.0, 220.0, 210.0)
    elif pattern == 1:  # text-image-like: white with dark stripes
        px[:, :] = 235.0
        px[::3, :] = 25.0
    elif pattern == 2:  # outdoor-like: blue-to-grey vertical gradient
        for r in range(16):
            px[r, :] = (90.0 + 4 * r, 120.0 + 3 * r, 200.0 - 2 * r)
    else:  # food-like: green/yellow checker
        px[:, :] = (90.0, 170.0, 60.0)
        px[::2, ::2] = (210.0, 190.0, 70.0)
    px += noise.normal(scale=6.0, size=px.shape)
    return np.clip(px, 0, 255).astype(np.uint8)


def main() -> None:
    images_dir = OUT / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    posts = []
    themes_rows = []
    image_counter = 0

    for i in range(1, 58):
        post_id = f"p{i:03d}"
        images = []
        if i <= 19:  # two static images, one visual pattern per post
            pattern = (i - 1) % 4
            for _ in range(2):
                image_counter += 1
                image_id = f"img{image_counter:03d}"
                rel = f"images/{image_id}.png"
                noise = np.random.default_rng(1000 + image_counter)
                Image.fromarray(pattern_block(pattern, noise)).save(OUT / rel)
                images.append({"image_id": image_id, "source": rel, "animated": False})
                themes_rows.append([image_id, PATTERN_THEMES[pattern]])
        elif i == 20:  # two animated images (excluded from clustering)
            for _ in range(2):
                image_counter += 1
                image_id = f"img{image_counter:03d}"
                rel = f"images/{image_id}.gif"
                frame_a = Image.new("RGB", (16, 16), (250, 250, 250))
                frame_b = Image.new("RGB", (16, 16), (10, 10, 10))
                frame_a.save(OUT / rel, save_all=True, append_images=[frame_b],
                             duration=200, loop=0)
                images.append({"image_id": image_id, "source": rel, "animated": True})
        posts.append(
            {
                "post_id": post_id,
                "user_id": f"u{((i - 1) % 45) + 1:02d}",
                "created_at": post_date(i).isoformat(),
                "text": TEXTS[i % len(TEXTS)],
                "hashtags": ["XianEpidemic"] + (["ComeOnXian"] if i % 5 == 0 else []),
                "likes": (i * 13) % 120 + (40 if images else 0),
                "comments": (i * 7) % 40,
                "shares": (i * 3) % 15,
                "is_original": True,
                "images": images,
            }
        )

    for i in range(58, 61):  # reposts, no images
        posts.append(
            {
                "post_id": f"r{i:03d}",
                "user_id": f"u{i - 57:02d}",
                "created_at": (START + timedelta(days=i - 50)).isoformat(),
                "text": "repost: " + TEXTS[i % len(TEXTS)],
                "hashtags": ["XianEpidemic"],
                "likes": i,
                "comments": i % 7,
                "shares": i % 5,
                "is_original": False,
                "images": [],
            }
        )

    with open(OUT / "posts.jsonl", "w", encoding="utf-8") as fh:
        for post in posts:
            fh.write(json.dumps(post, ensure_ascii=False, sort_keys=True) + "\n")

    with open(OUT / "image_themes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "theme"])
        writer.writerows(themes_rows)

    with open(OUT / "info_predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["post_id", "label"])
        for i in range(1, 51):
            writer.writerow([f"p{i:03d}", INFO[(i - 1) % 4]])

    with open(OUT / "emotion_predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["post_id", "label"])
        for i in range(1, 51):
            writer.writerow([f"p{i:03d}", EMOTION[(i - 1) % 5]])

    # construction checks
    n_images = sum(len(p["images"]) for p in posts)
    n_static = sum(
        1 for p in posts for img in p["images"] if not img["animated"]
    )
    assert len(posts) == 60
    assert sum(1 for p in posts if p["is_original"]) == 57
    assert n_images == 40 and n_static == 38
    assert len({p["user_id"] for p in posts}) == 45
    assert len(themes_rows) == 38
    print(f"fixture written to {OUT}")


if __name__ == "__main__":
    main()
