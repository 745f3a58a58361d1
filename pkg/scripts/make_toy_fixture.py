"""Regenerate the bundled toy fixture under src/codemix_offense/data/toy/.

Synthetic, schema-compatible code-mixed comments: each class has its own cue
words mixed with shared filler in native script, romanized form and English.
"""
import json
import random
from pathlib import Path

from codemix_offense.corpus import class_distribution, label_schema, load_split, save_split, make_split

OUT = Path(__file__).resolve().parents[1] / "src" / "codemix_offense" / "data" / "toy"
SIZES = {"train": 6, "dev": 2, "test": 2}  # per class

NATIVE = {
    "Kannada": {"filler": ["ಚಿತ್ರ", "ಹಾಡು", "ನಮ್ಮ", "ತುಂಬಾ"], "good": ["ಚೆನ್ನಾಗಿದೆ", "ಸೂಪರ್"], "bad": ["ಕೆಟ್ಟ", "ಹುಚ್ಚ"]},
    "Tamil": {"filler": ["படம்", "பாட்டு", "நம்ம", "ரொம்ப"], "good": ["அருமை", "சூப்பர்"], "bad": ["மோசம்", "லூசு"]},
    "Malayalam": {"filler": ["പടം", "പാട്ട്", "നമ്മുടെ", "വളരെ"], "good": ["നല്ലത്", "സൂപ്പർ"], "bad": ["മോശം", "പൊട്ടൻ"]},
}
ROMAN_FILLER = ["movie", "trailer", "song", "bro", "anna", "yaar", "scene", "hero", "today", "first"]
CUES = [
    ["bollywood", "hindi", "telugu", "dubbed", "remake"],  # Not-{language}
    ["super", "nice", "waiting", "mass", "blockbuster", "love"],  # Not_offensive
    ["idiot", "loser", "nee", "fellow", "joker"],  # individual
    ["fans", "gang", "ivaru", "community", "people"],  # group
    ["channel", "media", "industry", "producers", "censor"],  # other
    ["worst", "rubbish", "nonsense", "useless", "trash"],  # untargeted
]


def sentence(rng, language, cls):
    native = NATIVE[language]
    words = rng.sample(ROMAN_FILLER, 2) + rng.sample(native["filler"], 1) + rng.sample(CUES[cls], 2)
    if cls == 1:
        words.append(rng.choice(native["good"]))
    elif cls >= 2:
        words.append(rng.choice(native["bad"]))
    rng.shuffle(words)
    return " ".join(words)


def main():
    manifest = {}
    for li, language in enumerate(NATIVE):
        rng = random.Random(1000 + li)
        schema = label_schema(language)
        manifest[language] = {}
        for split, per_class in SIZES.items():
            texts, labels = [], []
            for cls, name in enumerate(schema):
                for _ in range(per_class):
                    texts.append(sentence(rng, language, cls))
                    labels.append(name)
            order = list(range(len(texts)))
            rng.shuffle(order)
            data = make_split([texts[i] for i in order], [labels[i] for i in order], language, split)
            path = OUT / language / f"{split}.tsv"
            save_split(data, path)
            reloaded = load_split(path, language, split)
            manifest[language][split] = {"size": len(reloaded), "counts": class_distribution(reloaded).counts}
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
