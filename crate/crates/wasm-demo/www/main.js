import init, { maskedCounts, guide, tokenize } from "./pkg/octaloop_wasm.js";

const $ = (id) => document.getElementById(id);

function fail(el, e) {
  el.textContent = String(e.message ?? e);
  el.className = "err";
}

function bars(canvas, values, max, color) {
  const g = canvas.getContext("2d");
  g.fillStyle = "#111";
  g.fillRect(0, 0, canvas.width, canvas.height);
  const w = canvas.width / values.length;
  g.fillStyle = color;
  values.forEach((v, i) => {
    const h = (v / max) * (canvas.height - 4);
    g.fillRect(i * w + 1, canvas.height - h, Math.max(1, w - 2), h);
  });
}

function schedule() {
  const iters = +$("s-iters").value;
  const cells = +$("s-cells").value;
  $("s-iters-v").textContent = iters;
  try {
    const c = Array.from(maskedCounts($("s-kind").value, iters, cells));
    bars($("s-plot"), c, cells, "#6cf");
    const picked = c.slice(1).map((n, i) => c[i] - n);
    $("s-text").textContent = `committed per step: ${picked.join(", ")}`;
    $("s-text").className = "";
  } catch (e) {
    fail($("s-text"), e);
  }
}

const UNCOND = [1.0, 0.8, 0.6, 0.4, 0.2];
const rows = { text: [1.0, 1.2, 0.6, 0.4, 0.2], audio: [1.0, 0.8, 0.6, 0.9, 0.2] };

function guidanceSliders() {
  for (const name of ["text", "audio"]) {
    const box = document.createElement("div");
    box.innerHTML = `<strong>${name}</strong><br>`;
    rows[name].forEach((v, i) => {
      const s = document.createElement("input");
      Object.assign(s, { type: "range", min: -2, max: 4, step: 0.05, value: v });
      s.oninput = () => { rows[name][i] = +s.value; guidance(); };
      box.append(`k${i} `, s, document.createElement("br"));
    });
    $("g-sliders").append(box);
  }
}

function guidance() {
  const t = +$("g-t").value;
  $("g-t-v").textContent = t.toFixed(1);
  try {
    const out = guide(new Float64Array(UNCOND), new Float64Array(rows.text), new Float64Array(rows.audio), t);
    const k = UNCOND.length;
    const probs = Array.from(out.slice(k));
    bars($("g-plot"), probs, 1, "#fc6");
    const best = probs.indexOf(Math.max(...probs));
    $("g-text").textContent =
      `logits ${Array.from(out.slice(0, k)).map((v) => v.toFixed(2)).join(" ")}; argmax k${best} at p = ${probs[best].toFixed(3)}`;
    $("g-text").className = "";
  } catch (e) {
    fail($("g-text"), e);
  }
}

const SR = 48000;

function signal(kind) {
  const n = 4 * SR;
  const out = new Float32Array(n);
  let seed = 12345;
  const rand = () => ((seed = (seed * 1103515245 + 12345) >>> 0) / 2 ** 32) * 2 - 1;
  let lp = 0;
  for (let i = 0; i < n; i++) {
    const t = i / SR;
    if (kind === "sweep") {
      out[i] = 0.5 * Math.sin(2 * Math.PI * (100 * t + 700 * t * t));
    } else if (kind === "chord") {
      const gate = (t * 2) % 1 < 0.6 ? 1 : 0.05;
      out[i] = gate * 0.2 * [220, 277, 330, 440].reduce((a, f) => a + Math.sin(2 * Math.PI * f * t), 0);
    } else {
      lp += 0.08 * (rand() - lp);
      out[i] = ((t * 3) % 1 < 0.3 ? 1.5 : 0.1) * lp;
    }
  }
  return out;
}

function heat(canvas, data, rows, cols, lo, hi) {
  const g = canvas.getContext("2d");
  const img = g.createImageData(cols, rows);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const v = Math.min(1, Math.max(0, (data[r * cols + c] - lo) / (hi - lo || 1)));
      const p = ((rows - 1 - r) * cols + c) * 4;
      img.data.set([255 * v, 255 * v * v, 80 + 120 * (1 - v), 255], p);
    }
  }
  canvas.width = cols;
  canvas.height = rows;
  canvas.style.width = "384px";
  canvas.style.height = "128px";
  g.putImageData(img, 0, 0);
}

function tokenizer() {
  const k = +$("t-k").value;
  $("t-k-v").textContent = k;
  const started = performance.now();
  try {
    const r = tokenize(signal($("t-sig").value), k, 1);
    const mel = r.mel;
    const hi = mel.reduce((a, b) => Math.max(a, b), 0);
    heat($("t-mel"), mel, r.melBins, r.frames, 0, hi);
    heat($("t-recon"), r.recon, r.melBins, r.frames, 0, hi);
    heat($("t-grid"), Float32Array.from(r.tokens), r.gridFreq, r.gridTime, 0, k - 1);
    $("t-text").textContent =
      `${r.melBins}×${r.frames} mel → ${r.gridFreq}×${r.gridTime} tokens, ${r.used} of ${k} codewords used, ` +
      `reconstruction MSE ${r.mse.toFixed(4)}, ${(performance.now() - started).toFixed(0)} ms`;
    $("t-text").className = "";
    r.free();
  } catch (e) {
    fail($("t-text"), e);
  }
}

await init();
$("status").textContent = "ready";
for (const id of ["s-iters", "s-cells", "s-kind"]) $(id).oninput = schedule;
guidanceSliders();
$("g-t").oninput = guidance;
$("t-k").oninput = () => ($("t-k-v").textContent = $("t-k").value);
$("t-run").onclick = tokenizer;
schedule();
guidance();
tokenizer();
