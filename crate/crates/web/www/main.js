import init, { Avatar, View, max_angle } from "./pkg/splat_avatar_web.js";

const SIZE = 128;
const status = document.getElementById("status");
const sliders = ["azimuth", "turn", "arms", "stride"].map((id) => document.getElementById(id));

function show(canvas, rgba) {
  canvas.width = SIZE;
  canvas.height = SIZE;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), SIZE, SIZE), 0, 0);
}

function currentView() {
  const [azimuth, turn, arms, stride] = sliders.map((s) => parseFloat(s.value));
  return new View(azimuth, turn, arms, stride);
}

// Lets the status line repaint before a long synchronous call.
const nextFrame = () => new Promise((r) => requestAnimationFrame(() => setTimeout(r, 0)));

async function main() {
  await init();
  const avatar = new Avatar(SIZE);
  const limit = max_angle();
  for (const s of sliders.slice(1)) {
    s.min = -limit;
    s.max = limit;
  }

  let pending = false;
  const draw = () => {
    for (const s of sliders) s.nextElementSibling.value = parseFloat(s.value).toFixed(2);
    if (pending) return;
    pending = true;
    requestAnimationFrame(() => {
      pending = false;
      const view = currentView();
      show(document.getElementById("splat"), avatar.render(view));
      show(document.getElementById("mesh"), avatar.render_reference(view));
    });
  };
  sliders.forEach((s) => s.addEventListener("input", draw));

  document.getElementById("compare").onclick = () => {
    const [psnr, ssim] = avatar.compare(currentView());
    status.textContent = `PSNR ${psnr.toFixed(2)} dB, SSIM ${ssim.toFixed(4)} (${avatar.point_count()} Gaussians)`;
  };
  document.getElementById("reinit").onclick = async () => {
    status.textContent = "Re-initializing…";
    await nextFrame();
    try {
      status.textContent = avatar.reinitialize();
    } catch (e) {
      status.textContent = `Re-initialization failed: ${e.message ?? e}`;
    }
    draw();
  };
  document.getElementById("reset").onclick = () => {
    avatar.reset();
    status.textContent = `${avatar.point_count()} Gaussians`;
    draw();
  };

  status.textContent = `${avatar.point_count()} Gaussians`;
  draw();
}

main().catch((e) => {
  status.textContent = `Failed to start: ${e.message ?? e}`;
});
