#!/usr/bin/env python3
"""Writes the bundled 200-record fixture used by the end-to-end tests.

Output is a pure function of --seed, so the files can be regenerated and
diffed. Usage: make_fixture.py --out fixtures/mini [--seed 7]
"""

import argparse
import csv
import io
import json
import random
from pathlib import Path
from xml.sax.saxutils import escape

PANELS = [f"PE{i}" for i in range(1, 11)] + [f"LS{i}" for i in range(1, 10)] + [f"SH{i}" for i in range(1, 7)]

# Climate themes; each becomes roughly one topic.
THEMES = {
    "modelling": "climate models global warming temperature projections ensemble simulation ocean atmosphere feedback",
    "soils": "greenhouse gas emissions soils nitrous oxide agriculture fertilizer field measurements carbon",
    "energy": "renewable energy wind power solar transition grid storage decarbonisation electricity",
    "circular": "circular economy recycling waste materials reuse industry resource efficiency",
    "coasts": "sea level rise coastal flooding adaptation storm surge infrastructure risk",
    "policy": "climate policy governance regulation carbon tax households behaviour municipalities",
}
CLIMATE_PHRASES = [
    "climate change", "global warming", "greenhouse gas emissions", "climate adaptation",
    "emissions of greenhouse gases", "carbon emissions", "climate mitigation", "warming of the climate",
]
OTHER = {
    "medicine": "patients clinical trial cohort treatment hospital outcomes diagnosis therapy",
    "maths": "theorem proof algebraic groups manifolds topology operators bounds",
    "linguistics": "language corpus syntax morphology speakers dialect grammar semantics",
    "history": "archive medieval manuscripts century trade church kingdom sources",
    "computing": "algorithm software distributed systems compiler verification network protocols",
}
DK_INSTITUTIONS = [
    "University of Copenhagen", "Aarhus University", "Technical University of Denmark", "Aalborg University",
    "University of Southern Denmark", "Roskilde University", "Danish Meteorological Institute",
    "Geological Survey of Denmark and Greenland", "Copenhagen Business School",
]
FOREIGN = [("Lund University", "SE"), ("University of Oslo", "NO"), ("ETH Zurich", "CH"), ("Utrecht University", "NL")]


def words(rng, bank, n):
    pool = bank.split()
    return " ".join(rng.choice(pool) for _ in range(n))


def document(rng, climate):
    if climate:
        theme = rng.choice(sorted(THEMES))
        body = words(rng, THEMES[theme], 14)
        phrase = rng.choice(CLIMATE_PHRASES)
        title = f"{phrase.capitalize()} and {words(rng, THEMES[theme], 3)}"
        abstract = f"We study {phrase} with {body}. Results on {words(rng, THEMES[theme], 6)} are reported."
    else:
        theme = rng.choice(sorted(OTHER))
        title = f"On {words(rng, OTHER[theme], 4)}"
        abstract = f"This work examines {words(rng, OTHER[theme], 16)}. We discuss {words(rng, OTHER[theme], 5)}."
    return title, abstract


def invert(text):
    index = {}
    for pos, token in enumerate(text.split()):
        index.setdefault(token, []).append(pos)
    return index


def openalex(rng, n):
    works = []
    for i in range(n):
        climate = rng.random() < 0.4
        title, abstract = document(rng, climate)
        year = rng.choice([2013, 2014, 2015, 2016, 2017, 2018, 2019, 2019, 2020])
        insts = [{"display_name": rng.choice(DK_INSTITUTIONS), "country_code": "DK", "id": f"https://openalex.org/I{rng.randrange(10**6)}"}]
        if rng.random() < 0.3:
            name, cc = rng.choice(FOREIGN)
            insts.append({"display_name": name, "country_code": cc})
        if rng.random() < 0.08:
            insts = [{"display_name": FOREIGN[0][0], "country_code": "SE"}]
        work = {
            "id": f"https://openalex.org/W{100000 + i}",
            "title": title,
            "publication_year": year,
            "language": "en",
            "doi": f"https://doi.org/10.5555/oa.{i}",
            "abstract_inverted_index": invert(abstract),
            "authorships": [{"institutions": [inst]} for inst in insts],
        }
        works.append(work)
    # One duplicate by DOI with fewer fields; dedupe keeps the fuller record.
    dup = dict(works[3])
    dup["id"] = "https://openalex.org/W199999"
    dup.pop("abstract_inverted_index")
    works.append(dup)
    return {"meta": {"count": len(works)}, "results": works}


def openaire(rng, n):
    parts = ['<?xml version="1.0" encoding="UTF-8"?>', "<response>", f"<header><total>{n}</total></header>", "<results>"]
    for i in range(n):
        climate = rng.random() < 0.35
        title, abstract = document(rng, climate)
        year = rng.choice([2014, 2015, 2016, 2017, 2018, 2019])
        dates = [f"{year}-0{rng.randrange(1, 10)}-1{rng.randrange(0, 10)}"]
        if rng.random() < 0.1:
            dates.append(f"{year + 1}-01-15")
        rels = []
        for _ in range(rng.randrange(1, 3)):
            name = rng.choice(DK_INSTITUTIONS)
            if rng.random() < 0.3:
                name = name.upper()
            rels.append(
                '<rel><to class="hasAuthorInstitution" scheme="dnet:result_organization_relations">'
                f"openorgs____::{rng.randrange(10**5)}</to><legalname>{escape(name)}</legalname>"
                '<country classid="DK" classname="Denmark"/></rel>'
            )
        lang = '<language classid="eng" classname="English"/>'
        if rng.random() < 0.05:
            lang += '<language classid="dan" classname="Danish"/>'
        parts.append(
            "<result><header><dri:objIdentifier>"
            f"od______{i:04d}::{rng.randrange(16**8):08x}</dri:objIdentifier></header>"
            "<metadata><oaf:entity><oaf:result>"
            f'<title classid="main title">{escape(title)}</title>'
            f"<description>{escape(abstract)}</description>"
            f"{''.join(f'<dateofacceptance>{d}</dateofacceptance>' for d in dates)}"
            f"{lang}"
            f'<pid classid="doi">10.5555/oaire.{i}</pid>'
            f"<rels>{''.join(rels)}</rels>"
            "</oaf:result></oaf:entity></metadata></result>"
        )
    parts += ["</results>", "</response>"]
    return "\n".join(parts) + "\n"


def to_csv(header, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def cordis(rng, n):
    rows = []
    for i in range(n):
        climate = rng.random() < 0.5
        title, abstract = document(rng, climate)
        partners = [rng.choice(DK_INSTITUTIONS)] + [f for f, _ in rng.sample(FOREIGN, 2)]
        countries = ["DK"] + [dict(FOREIGN)[f] for f in partners[1:]]
        rows.append([f"{800000 + i}", title, abstract, rng.choice(PANELS) if rng.random() < 0.4 else "",
                     ";".join(partners), ";".join(countries), str(rng.choice([2014, 2016, 2018, 2019]))])
    return to_csv(["projectID", "title", "objective", "panel", "participants", "countries", "year"], rows)


def kohesio(rng, n):
    municipalities = ["Aarhus Kommune", "Københavns Kommune", "Region Midtjylland", "Aalborg Kommune"]
    rows = []
    for i in range(n):
        climate = rng.random() < 0.4
        title, abstract = document(rng, climate)
        description = title if i % 7 == 0 else abstract  # some descriptions just repeat the title
        rows.append([f"Q{900000 + i}", title, description, rng.choice(municipalities), "DK",
                     str(rng.choice([2015, 2017, 2019])), "research and innovation"])
    return to_csv(["project_id", "label", "description", "beneficiary", "country", "year", "category"], rows)


def vocabulary():
    return {
        "goals": [
            {
                "goal": 13,
                "concepts": [
                    {"label": "climate change", "target": "13.2", "terms": ["climate change", "climate adaptation", "climate mitigation"]},
                    {"label": "global warming", "terms": [
                        "global warming",
                        {"tokens": ["warming", "climate"], "allow_permutation": True, "max_gap": 2},
                    ]},
                    {"label": "greenhouse gases", "terms": [
                        {"tokens": ["greenhouse", "gas"], "allow_permutation": True, "max_gap": 2},
                        {"tokens": ["greenhouse", "gases"], "allow_permutation": True, "max_gap": 2},
                        {"tokens": ["carbon", "emissions"], "max_gap": 1},
                    ]},
                ],
            },
            {
                "goal": 7,
                "concepts": [{"label": "renewable energy", "terms": ["renewable energy", "solar", "wind power"]}],
            },
        ]
    }


PANEL_WORDS = {p: f"{p.lower()}topic" for p in PANELS}


def panel_text(rng, panel):
    # A panel-specific vocabulary plus shared filler keeps the fallback embedder
    # separable by panel without being trivially identical.
    own = " ".join(f"{PANEL_WORDS[panel]}{k}" for k in range(6))
    filler = "research project results analysis methods data novel approach"
    return words(rng, own, 10) + " " + words(rng, filler, 4)


def panel_title(rng, panel):
    return words(rng, " ".join(f"{PANEL_WORDS[panel]}{k}" for k in range(6)), 3)


def erc(rng, per_panel_projects=6, per_project_pubs=2):
    projects, pubs = [], []
    pub_id = 0
    for p_index, panel in enumerate(PANELS):
        for j in range(per_panel_projects):
            pid = f"{700000 + p_index * 100 + j}"
            projects.append([pid, panel_title(rng, panel), panel_text(rng, panel),
                             f"ERC-2016-STG/{panel}", rng.choice(DK_INSTITUTIONS), "DK", "2016"])
            for _ in range(per_project_pubs):
                pubs.append([f"P{pub_id:05d}", panel_title(rng, panel), panel_text(rng, panel), pid,
                             f"10.5555/erc.{pub_id}", "2017"])
                pub_id += 1
    # Publications citing an unknown grant are dropped by the linker.
    pubs.append(["P99999", "Orphan paper", "text without a grant", "123", "", "2017"])
    return (to_csv(["projectID", "title", "objective", "panel", "participants", "countries", "year"], projects),
            to_csv(["id", "title", "abstract", "projectID", "doi", "year"], pubs))


CONFIG = """# Bundled 200-record fixture (offline harvest, fallback embedder).
[run]
seed = 7
country = "DK"
year_from = 2014
year_to = 2019
goal = 13
out = "out"

[harvest]
live = false
openalex_file = "openalex.json"
openaire_file = "openaire.xml"
cordis_file = "cordis.csv"
kohesio_file = "kohesio.csv"
fetch_date = "2022-06-01"
kohesio_categories = ["research"]

[tag]
vocabulary = "vocabulary.json"
min_hits = 1

[embed]
provider = "FALLBACK_HASH"
dim = 64

[topics]
k = 6
sweep_min = 2
sweep_max = 10
perplexity = 15
tsne_iterations = 500
label_terms = 8

[panels]
projects = "erc_projects.csv"
publications = "erc_publications.csv"
percentile = 90
epochs = 40
learning_rate = 0.5
"""


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    # 79 + 1 duplicate OpenAlex works, 70 OpenAIRE results, 30 CORDIS projects, 20 Kohesio rows.
    (out / "openalex.json").write_text(json.dumps(openalex(rng, 79), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "openaire.xml").write_text(openaire(rng, 70), encoding="utf-8")
    (out / "cordis.csv").write_text(cordis(rng, 30), encoding="utf-8")
    (out / "kohesio.csv").write_text(kohesio(rng, 20), encoding="utf-8")
    (out / "vocabulary.json").write_text(json.dumps(vocabulary(), indent=2) + "\n", encoding="utf-8")
    projects, pubs = erc(rng)
    (out / "erc_projects.csv").write_text(projects, encoding="utf-8")
    (out / "erc_publications.csv").write_text(pubs, encoding="utf-8")
    (out / "config.toml").write_text(CONFIG, encoding="utf-8")


if __name__ == "__main__":
    main()
