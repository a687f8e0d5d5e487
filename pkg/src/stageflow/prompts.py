"""Prompt assets: per-operator prompt templates and the designer planning prompt.

Operator prompts are fixed texts with {context} and {guidance} placeholders.
The designer planning prompt is shipped as a versioned asset file so its bytes
can be pinned by tests and regenerated datasets stay comparable across runs.
"""

from __future__ import annotations

from importlib import resources

from .graph import OperatorTemplate

DESIGNER_PROMPT_ASSET = "designer_prompt_v1.txt"

OPERATOR_PROMPTS: dict[OperatorTemplate, str] = {
    OperatorTemplate.GENERATE_CODE: """You are an expert in solving coding problems. Generate Python code based on the following context and guidance.

Context: {context}
Guidance: {guidance}

Your code must:
1. Define a function named `solve` that calculates and returns the final result.
2. Clearly comment each computational step.
3. Obtain necessary inputs from within the function or global variables (no function parameters).

Output Format:
```python
# Your generated code here (use the main function name `solve`)
```""",
    OperatorTemplate.GENERATE_ANSWER: """You are an expert in solving reasoning problems. Think step by step to solve the problem using the context and guidance.

Context: {context}
Guidance: {guidance}

Output Format:
Reasoning: <You should think step by step to solve the problem.>
Answer:""",
    OperatorTemplate.REVIEW_SOLUTION: """You are a careful reviewer trained to detect logical and mathematical errors. Your job is to critically evaluate the solution for correctness, soundness, and completeness.

Context: {context}
Guidance: {guidance}

Instructions:
- Try to find mistakes at every step of the given answer.
- Bring the answer back to the original question and check if there is anything that does not meet the requirements.

Output Format:
Review Details: <step-by-step review>
Overall Verdict: <accept/minor_issues/major_issues/reject>""",
    OperatorTemplate.DECOMPOSE_PROBLEM: """You are an expert in decomposing problems. Break down the original problem into clearly defined, structured sub-tasks.

Context: {context}
Guidance: {guidance}

Instructions:
- Clearly outline each distinct sub-task.
- Do not attempt to solve any sub-task.
- Maintain logical completeness.
- Decompose the problem into 2-4 steps at most.

Output:
<your_decomposed_problem>""",
    OperatorTemplate.GENERATE_PLAN: """You are an expert in generating step-by-step executable plans. Generate a step-by-step executable plan to approach the given problem.

Context: {context}
Guidance: {guidance}

Instructions:
- Clearly number each step.
- Ensure each step is actionable and logically sequenced.
- Do not solve the problem here, only provide the plan.
- Give 2-4 steps at most.

Output Format:
Solution Plan:
<step_id>: <description>
<step_id>: <description>""",
    OperatorTemplate.REFINE_CODE: """You are an expert in refining Python code. Refine the existing Python code based on context and guidance.

Context: {context}
Guidance: {guidance}

Instructions:
- Correct errors or inefficiencies identified.
- Clearly comment important logic or corrections.
- Maintain the main function name as `solve`.

Output Format:
```python
# Your refined code here (use the main function name `solve`)
```""",
    OperatorTemplate.REFINE_ANSWER: """You are an expert in refining answers. Refine the existing answer based on context and guidance.

Context: {context}
Guidance: {guidance}

Output Format:
Answer: <your refined answer>""",
    OperatorTemplate.ORGANIZE_SOLUTION: """You are an expert in organizing solutions. Clearly organize the final solution for presentation based on the provided context and guidance.

Context: {context}
Guidance: {guidance}

Instructions:
- Clearly present final reasoning steps and results.
- Ensure alignment with the problem's required formatting.
- Omit irrelevant or incorrect previous attempts.

Output:
<your_organized_solution>""",
    OperatorTemplate.ENSEMBLE: """You are an expert in generating multiple valid and diverse solutions using distinct logical approaches.

Context: {context}
Guidance: {guidance}

Instructions:
- Each solution must independently satisfy all constraints.
- Clearly separate each distinct reasoning path and solution.

Output:
<your_ensemble_output>""",
    OperatorTemplate.DEFAULT: """You are an expert in executing actions strictly according to the given context and guidance.

Context: {context}
Guidance: {guidance}

Instructions:
- Follow every detail of the instructions carefully.
- Ensure output exactly matches the requested format.

Output:
<your_output>""",
}


def render_operator_prompt(template: OperatorTemplate, context: str, guidance: str) -> str:
    """Fill an operator prompt. TERMINATE is a control signal and renders empty.

    Substitution uses replace, not str.format, so braces in the context or
    guidance pass through untouched.
    """
    if template is OperatorTemplate.TERMINATE:
        return ""
    text = OPERATOR_PROMPTS[template]
    return text.replace("{context}", context).replace("{guidance}", guidance)


def load_designer_prompt() -> str:
    """Raw bytes of the versioned planning prompt asset, decoded as UTF-8."""
    return (resources.files("stageflow") / "assets" / DESIGNER_PROMPT_ASSET).read_text(encoding="utf-8")


def render_designer_prompt(summary_text: str) -> str:
    return load_designer_prompt().replace("{summary}", summary_text)
