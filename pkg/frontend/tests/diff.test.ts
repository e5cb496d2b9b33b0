import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { DiffController, EditorController } from "../src/controllers.js";
import { flush, makeCriterion, makeSensor, MockServer } from "./mocks.js";

function setup() {
  const server = new MockServer();
  const sensor = server.addSensor(makeSensor({ goal: "is my desk messy?" }));
  const api = new ApiClient("http://mock", server.fetch);
  const editorContainer = document.createElement("div");
  const diffContainer = document.createElement("div");
  document.body.append(editorContainer, diffContainer);
  const editor = new EditorController(api, sensor.sensor_id, editorContainer);
  const diff = new DiffController(api, sensor.sensor_id, diffContainer, editor);
  return { server, sensor, api, editor, diff, diffContainer };
}

const categories = [
  { label: "Desk messy", frame_refs: ["a".repeat(64), "b".repeat(64)] },
  { label: "Not: Desk messy", frame_refs: ["c".repeat(64)] },
];

describe("examples-diff (acceptance criterion 10c)", () => {
  it("accepting a subset of drafts creates exactly the accepted ones", async () => {
    const { server, sensor, diff, diffContainer } = setup();
    const proposed = [
      makeCriterion(sensor.sensor_id, { provenance: "examples_diff", title: "Papers Piled" }),
      makeCriterion(sensor.sensor_id, { provenance: "examples_diff", title: "Mugs Left Out" }),
      makeCriterion(sensor.sensor_id, { provenance: "examples_diff", title: "Cables Tangled" }),
    ];
    server.diffResponses.push({ reasoning: "messy frames show piles and mugs", proposed });

    await diff.submit(categories);

    const posted = server.recorded("POST", `/sensors/${sensor.sensor_id}/examples-diff`);
    expect(posted).toHaveLength(1);
    expect(posted[0]!.body).toEqual({ categories });
    expect(diffContainer.querySelector(".diff-reasoning")!.textContent).toBe(
      "messy frames show piles and mugs",
    );
    expect(diffContainer.querySelectorAll(".draft")).toHaveLength(3);

    // Accept the first and third drafts only.
    const boxes = [...diffContainer.querySelectorAll<HTMLInputElement>(".draft-accept")];
    boxes[0]!.checked = true;
    boxes[2]!.checked = true;
    diffContainer.querySelector<HTMLElement>(".drafts-accept")!.click();
    await flush();

    const creations = server.recorded("POST", `/sensors/${sensor.sensor_id}/criteria`).filter(
      (r) => r.path.endsWith("/criteria"),
    );
    expect(creations).toHaveLength(2);
    const questions = creations.map((r) => (r.body as { question: string }).question);
    expect(questions).toEqual([proposed[0]!.question, proposed[2]!.question]);
    const stored = [...server.criteria.values()];
    expect(stored).toHaveLength(2);
    expect(stored.map((c) => c.title).sort()).toEqual(["Cables Tangled", "Papers Piled"]);
    expect(stored.every((c) => c.provenance === "examples_diff" && !c.enabled)).toBe(true);

    // Accepted drafts leave the proposal list; the others stay.
    expect(diff.proposed.map((c) => c.title)).toEqual(["Mugs Left Out"]);
    expect(diffContainer.querySelectorAll(".draft")).toHaveLength(1);
  });

  it("accepting nothing creates nothing", async () => {
    const { server, sensor, diff, diffContainer } = setup();
    server.diffResponses.push({
      reasoning: "r",
      proposed: [makeCriterion(sensor.sensor_id, { provenance: "examples_diff" })],
    });
    await diff.submit(categories);
    diffContainer.querySelector<HTMLElement>(".drafts-accept")!.click();
    await flush();
    expect(server.recorded("POST", `/sensors/${sensor.sensor_id}/criteria`)).toHaveLength(0);
    expect(server.criteria.size).toBe(0);
    expect(diff.proposed).toHaveLength(1);
  });

  it("surfaces server failure as a thrown ApiError", async () => {
    const { diff } = setup();
    await expect(diff.submit(categories)).rejects.toMatchObject({ status: 502 });
  });
});
