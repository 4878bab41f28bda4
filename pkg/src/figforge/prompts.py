"""Role prompts, versioned as plain text assets.

These are configuration, not logic: every prompt pins the exact JSON shape the
role must answer with, and all answers are schema-validated before use.
"""

PROMPT_VERSION = "1"

PARSER_SYSTEM = """\
You analyze the text of a scientific paper and plan a method figure.
Identify the research theme, the visual concepts the figure needs, and the
directed relations between them.

Answer with a single JSON object, nothing else:
{
  "theme": "<short research-topic phrase>",
  "concepts": [
    {"id": "<snake_case_id>", "name": "<display name>",
     "description": "<one sentence>", "order": <int, presentation order>}
  ],
  "edges": [
    {"source": "<concept id>", "target": "<concept id>", "label": "<relation>"}
  ]
}
Rules: at least one concept; edge endpoints must be listed concept ids;
ids unique.
"""

DRAWER_SYSTEM = """\
You render ONE concept onto a partially drawn method figure by invoking
drawing templates from the candidate list. Bind only parameters the template
declares, keep geometry inside the page, and avoid overlapping regions listed
as occupied.

Answer with a single JSON object, nothing else:
{
  "invocations": [
    {"middleware": "<candidate id>", "bindings": {"<param>": <value>}}
  ],
  "extra_elements": [
    {"op": "shape", "shape": "rect", "x": "<number>", "y": "<number>",
     "width": "<number>", "height": "<number>", "label": "<text or null>"}
  ],
  "note": "<one-line placement rationale>"
}
Rules: at least one invocation (extra_elements are optional embellishments
with literal numbers only); middleware ids must come from the candidates.
"""

EVALUATOR_SYSTEM = """\
You judge the quality of a method figure against the concept plan. Consider
coverage of the concepts, layout clarity, label readability, and whether
relations are visually traceable. Score 0.0 (unusable) to 1.0 (excellent).

Answer with a single JSON object, nothing else:
{"score": <float 0..1>, "feedback": "<concrete revision notes>"}
"""

CONCEPT_EVALUATOR_SYSTEM = """\
You judge how well ONE concept is rendered inside a method figure. Only the
elements tagged with the given concept id are under review; the rest of the
canvas is context. Score 0.0 (missing or wrong) to 1.0 (clear and correct).

Answer with a single JSON object, nothing else:
{"score": <float 0..1>, "feedback": "<one sentence>"}
"""

REFINER_SYSTEM = """\
You polish the layout of a finished method figure. Propose small translations
that align boxes and even out spacing. Do not delete anything.

Answer with a single JSON object, nothing else:
{"moves": [{"element": "<element id>", "dx": <number>, "dy": <number>}]}
An empty moves list is a valid answer.
"""

CONSTRUCTOR_EXTRACT_SYSTEM = """\
You study a paper's method figure (given as diagram XML) together with one
named concept, and abstract the region depicting that concept into a reusable
parameterized drawing template. Use parameters for position, size, and any
count or style the region suggests; defaults must reproduce the original
region.

Template language: a JSON body with an "instructions" list. Each instruction
is either
  {"op": "shape", "shape": <kind>, "x": <expr>, "y": <expr>,
   "width": <expr>, "height": <expr>, "label": <text|null>,
   "fill": "#RRGGBB", "stroke": "#RRGGBB", "opacity": <expr>,
   "repeat": {"count": "<integer param>", "var": "<loop var>"}}
or
  {"op": "link", "x1": <expr>, "y1": <expr>, "x2": <expr>, "y2": <expr>,
   "arrow": "filled|open|none|block"}.
Expressions use + - * / over declared parameter names and loop variables.
Shape kinds: rect, rounded_rect, ellipse, cuboid, trapezoid, text, path.
A string parameter referenced as "$name" selects shapes or colors by value.

Answer with a single JSON object, nothing else:
{
  "proposals": [
    {"name": "<Template_Name>",
     "params": [{"name": "x", "kind": "number", "default": 0,
                 "constraint": [<lo>, <hi>] or null}],
     "body": {"instructions": [ ... ]}}
  ]
}
Return {"proposals": []} when nothing in the figure depicts the concept.
"""

CONSTRUCTOR_MUTATE_SYSTEM = """\
You evolve ONE drawing template. Produce a variant that adjusts its
parameters or extends its functionality (new enum option, extra styling
parameter, wider valid range). Keep the template language rules from its
body; the variant must remain self-contained and valid.

Answer with a single JSON object, nothing else:
{"proposal": {"name": "<new name>", "params": [...], "body": {...}}}
or {"proposal": null} if no useful variant exists.
"""

CONSTRUCTOR_CROSSOVER_SYSTEM = """\
You combine TWO drawing templates into one offspring that inherits
complementary features from both parents (for example, one parent's shape
repertoire with the other's repetition structure). Declare every parameter
the offspring body references.

Answer with a single JSON object, nothing else:
{"proposal": {"name": "<new name>", "params": [...], "body": {...}}}
or {"proposal": null} if the parents cannot be usefully combined.
"""

CONSTRUCTOR_SCREEN_SYSTEM = """\
Several drawing templates were just merged under one concept. Identify
templates that are functionally redundant (another listed template can
reproduce their output). Prefer keeping the more general template.

Answer with a single JSON object, nothing else:
{"remove": ["<middleware id>", ...]}
An empty list means all templates are worth keeping.
"""

FILTER_SYSTEM = """\
Given a target concept and a list of candidate drawing templates retrieved by
similarity, keep only the templates genuinely suitable for rendering the
concept. You may only prune; never invent ids.

Answer with a single JSON object, nothing else:
{"keep": ["<middleware id>", ...]}
"""
