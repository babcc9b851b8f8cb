// Expects the wasm-bindgen `--target web` output in ./pkg (see the README).
import init, { lr_curve, render_identity, retrieval_metrics } from "./pkg/vireid_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const ints = (text) => text.split(/[\s,]+/).filter((s) => s.length).map(Number);

function show(id, message) {
  $(id).textContent = message;
  $(id).className = message ? "error" : "";
}

function drawCurve() {
  const epochs = num("lr-epochs");
  const steps = 8;
  let lr;
  try {
    lr = lr_curve($("lr-kind").value, num("lr-base"), num("lr-start"), num("lr-warm"), epochs,
      Uint32Array.from(ints($("lr-milestones").value)), steps);
  } catch (e) {
    show("lr-msg", e.message);
    return;
  }
  show("lr-msg", "");
  const c = $("lr-plot");
  const g = c.getContext("2d");
  const pad = 30;
  const max = Math.max(...lr);
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#999";
  g.strokeRect(pad, 10, c.width - pad - 10, c.height - pad - 10);
  g.strokeStyle = "#1565c0";
  g.beginPath();
  lr.forEach((v, i) => {
    const x = pad + (i / (lr.length - 1 || 1)) * (c.width - pad - 10);
    const y = c.height - pad - (v / max) * (c.height - pad - 20);
    i ? g.lineTo(x, y) : g.moveTo(x, y);
  });
  g.stroke();
  g.fillStyle = "#222";
  g.fillText(max.toExponential(1), 2, 16);
  g.fillText("0", 2, c.height - pad);
  g.fillText(`epoch ${epochs}`, c.width - 60, c.height - 10);
}

function drawFaces() {
  const [h, w] = [64, 32];
  const box = $("faces");
  box.replaceChildren();
  const sample = num("id-sample");
  try {
    for (const modality of ["visible", "infrared"]) {
      const row = document.createElement("div");
      for (let id = 0; id < num("id-count"); id++) {
        const px = render_identity(id, modality, BigInt(num("id-seed")), sample < 0 ? undefined : sample, h, w);
        const c = document.createElement("canvas");
        c.width = w;
        c.height = h;
        c.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(px), w, h), 0, 0);
        row.appendChild(c);
      }
      box.appendChild(row);
    }
    show("id-msg", "");
  } catch (e) {
    show("id-msg", e.message);
  }
}

function scoreRanking() {
  try {
    const out = JSON.parse(retrieval_metrics(Uint32Array.from(ints($("rm-ranked").value)), num("rm-query"), num("rm-max")));
    $("rm-out").textContent = out === null
      ? "no positive in the gallery"
      : `CMC  ${out.cmc.map((v) => v.toFixed(0)).join(" ")}\nAP   ${out.ap.toFixed(4)}\nINP  ${out.inp.toFixed(4)}`;
  } catch (e) {
    $("rm-out").textContent = e.message;
  }
}

await init();
for (const id of ["lr-kind", "lr-base", "lr-start", "lr-warm", "lr-epochs", "lr-milestones"]) $(id).addEventListener("input", drawCurve);
for (const id of ["id-seed", "id-count", "id-sample"]) $(id).addEventListener("input", drawFaces);
for (const id of ["rm-ranked", "rm-query", "rm-max"]) $(id).addEventListener("input", scoreRanking);
drawCurve();
drawFaces();
scoreRanking();
