"""
From judge responses to rating rows
===================================

Judges answer with a free-text explanation followed by a verbal label.  The
parser maps the last label to its Likert level and reports responses it
cannot read instead of guessing.
"""

from selfbias.judge_parser import load_label_maps, parse_judge_response, parse_judgments

maps = load_label_maps()
for dim, lm in sorted(maps.items()):
    print(f"{dim:20s} {' < '.join(lm.ordered_labels)}")

print()
print(parse_judge_response("Explanation: every claim is supported, Answer: all is faithful", "faithfulness", maps))

records = [
    {"prompt_id": "p1", "dimension": "helpfulness", "model": "gpt-4o", "judge": "llama3-70b",
     "response_text": "Explanation: clear and complete. Answer: [Very Helpful]"},
    {"prompt_id": "p1", "dimension": "logical_correctness", "model": "gpt-4o", "judge": "llama3-70b",
     "response_text": "Explanation: one step is wrong, Answer: corect"},
    {"prompt_id": "p1", "dimension": "conciseness", "model": "gpt-4o", "judge": "llama3-70b",
     "response_text": "I think it is fine."},
]
rows, dropped = parse_judgments(records, maps)
print()
for row in rows:
    print(row)
print("dropped:", dropped)

rows, dropped = parse_judgments(records, maps, strict=False)
print("lenient mode keeps", len(rows), "rows")
