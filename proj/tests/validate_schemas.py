"""Runs the CLI on a small fixture, exercises every endpoint, and validates
artifacts and responses against docs/schemas."""
import json
import pathlib
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request

import jsonschema
from referencing import Registry, Resource

gcskel = sys.argv[1]
schema_dir = pathlib.Path(sys.argv[2])
schemas = {p.name.removesuffix(".schema.json"): json.loads(p.read_text())
           for p in schema_dir.glob("*.schema.json")}
registry = Registry().with_resources(
    [(s["$id"], Resource.from_contents(s)) for s in schemas.values()])
failures = 0


def check(name, doc, label):
    global failures
    v = jsonschema.Draft202012Validator(schemas[name], registry=registry)
    errs = list(v.iter_errors(doc))
    print(f"{'ok  ' if not errs else 'FAIL'} {label} against {name}")
    for e in errs[:5]:
        print("     ", list(e.absolute_path), e.message[:200])
    failures += bool(errs)


def call(base, method, path, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(base + path, data=data, method=method)
    try:
        with urllib.request.urlopen(req, timeout=60) as r:
            return r.status, json.load(r)
    except urllib.error.HTTPError as e:
        return e.code, json.load(e)


with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    cloud = tmp / "cyl.xyzn"
    run = tmp / "run"
    subprocess.run([gcskel, "fixture", "--name", "cylinder", "--points", "1500",
                    "--out", str(cloud)], check=True)
    subprocess.run([gcskel, "run", "--input", str(cloud), "--clusters", "8",
                    "--out", str(run), "--quiet"], check=True)
    for name in ["manifest", "parts", "selection", "skeleton"]:
        check(name, json.loads((run / f"{name}.json").read_text()), f"{name}.json")

    bad = tmp / "bad"
    r = subprocess.run([gcskel, "run", "--input", str(tmp / "missing.xyz"),
                        "--out", str(bad), "--quiet"], capture_output=True)
    manifest = json.loads((bad / "manifest.json").read_text())
    check("manifest", manifest, "manifest.json of a failed run")
    if r.returncode != 2 or manifest["complete"] or manifest["error"]["stage"] != "load":
        print("FAIL failed run reports the load stage")
        failures += 1

    server = subprocess.Popen([gcskel, "serve", "--session", str(run), "--port", "0"],
                              stdout=subprocess.PIPE, text=True)
    try:
        line = server.stdout.readline()
        base = line.strip().split(" on ")[1]
        status, parts = call(base, "GET", "/parts")
        check("parts_view", parts, "GET /parts")
        ids = [c["id"] for c in parts["candidates"]]
        check("cloud_view", call(base, "GET", "/cloud?max=20")[1], "GET /cloud")
        check("skeleton_view", call(base, "GET", "/skeleton")[1], "GET /skeleton")
        check("session", call(base, "POST", "/selection", {"selected": ids[:2]})[1],
              "POST /selection")
        status, err = call(base, "POST", "/selection", {"selected": [len(ids) + 5]})
        check("error", err, "POST /selection with an unknown id")
        if status != 422 or err["offending_ids"] != [len(ids) + 5]:
            print("FAIL unknown id gives 422 with the id")
            failures += 1
        status, err = call(base, "POST", "/remove", {"oops": 1})
        check("error", err, "POST /remove without ids")
        if status != 400:
            print("FAIL malformed body gives 400")
            failures += 1
        check("session", call(base, "POST", "/remove", {"id": ids[1]})[1], "POST /remove")
        check("skeleton_view", call(base, "POST", "/relink")[1], "POST /relink")
        status, parts = call(base, "GET", "/parts")
        if ids[1] in [c["id"] for c in parts["candidates"]]:
            print("FAIL removed candidate still listed")
            failures += 1
        check("session", json.loads((run / "session.json").read_text()), "session.json")
    finally:
        server.terminate()
        server.wait(timeout=30)

    for example in sorted((schema_dir.parent / "examples").glob("*.json")):
        name = {"get_cloud": "cloud_view", "get_skeleton": "skeleton_view",
                "post_relink": "skeleton_view", "post_selection": "session",
                "post_remove": "session"}.get(example.stem, example.stem)
        check(name, json.loads(example.read_text()), f"docs/examples/{example.name}")

print("schema checks failed:" if failures else "all schema checks passed", failures or "")
sys.exit(1 if failures else 0)
