"""Reference evaluator for the report rules using Python's `re`.

Writes snippets_expected.json next to this file. Offsets are UTF-8 bytes.
Run: python3 reference_oracle.py
"""
import csv
import json
import os
import re

HERE = os.path.dirname(os.path.abspath(__file__))
RULES = os.path.join(HERE, "..", "..", "rules", "default_rules.csv")
DECIDING = {"congestion", "edema", "heart_failure", "decompensation"}


def load_rules():
    with open(RULES, encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    rules = []
    for r in rows:
        flags = re.IGNORECASE if "i" in r["flags"] else 0
        rules.append((r["category"], r["polarity"], re.compile(r["pattern"], flags)))
    return rules


def byte_offset(text, i):
    return len(text[:i].encode("utf-8"))


def findings(text, rules):
    found = []
    for idx, (cat, pol, rx) in enumerate(rules):
        for m in rx.finditer(text):
            found.append((idx, cat, pol, m.start(), m.end(), m.group(0)))
    negs = [(c, s, e) for (_, c, p, s, e, _) in found if p == "negative"]
    kept = [
        f for f in found
        if f[2] == "negative" or not any(c == f[1] and s <= f[3] and f[4] <= e for c, s, e in negs)
    ]
    kept.sort(key=lambda f: (f[3], 0 if f[2] == "negative" else 1, f[0]))
    return [
        {
            "category": c,
            "polarity": p,
            "start": byte_offset(text, s),
            "end": byte_offset(text, e),
            "text": t,
        }
        for (_, c, p, s, e, t) in kept
    ]


def main():
    rules = load_rules()
    with open(os.path.join(HERE, "snippets.json"), encoding="utf-8") as f:
        snippets = json.load(f)
    out = []
    for s in snippets:
        fs = findings(s["text"], rules)
        label = any(f["polarity"] == "positive" and f["category"] in DECIDING for f in fs)
        out.append({"id": s["id"], "findings": fs, "positive": label})
    with open(os.path.join(HERE, "snippets_expected.json"), "w", encoding="utf-8") as f:
        json.dump(out, f, ensure_ascii=False, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
