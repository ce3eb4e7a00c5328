// three.js flow view: static background streamlets plus one colored line
// group per active tag. Geometry lives in static buffers; overlays are
// rebuilt only when the store changes.

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import type { StreamlineRecord } from "./api.js";
import type { ExplorerStore } from "./state.js";

const BACKGROUND_COLOR = 0xffffff;
const STREAMLET_COLOR = 0x7aa6d8; // calm blue background flow
const MAX_BACKGROUND_POINTS = 400_000;

function polylineSegments(points: number[]): Float32Array {
  const n = points.length / 3;
  const out = new Float32Array(Math.max(0, n - 1) * 6);
  for (let i = 0; i < n - 1; i++) {
    out.set(points.slice(3 * i, 3 * i + 6), 6 * i);
  }
  return out;
}

export class FlowView {
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private controls: OrbitControls;
  private overlays = new THREE.Group();
  private animating = true;

  constructor(private canvas: HTMLCanvasElement, private store: ExplorerStore) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.scene.background = new THREE.Color(BACKGROUND_COLOR);
    this.camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
    this.camera.position.set(4.5, 3.5, 4.5);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.enableDamping = true;
    this.scene.add(this.overlays);
    store.onChange(() => this.rebuildOverlays());
    this.resize();
    window.addEventListener("resize", () => this.resize());
    this.loop();
  }

  setBackground(lines: StreamlineRecord[]): void {
    const chunks: Float32Array[] = [];
    let total = 0;
    for (const line of lines) {
      const seg = polylineSegments(line.points);
      total += seg.length / 3;
      chunks.push(seg);
      if (total > MAX_BACKGROUND_POINTS) break;
    }
    const merged = new Float32Array(chunks.reduce((s, c) => s + c.length, 0));
    let off = 0;
    for (const c of chunks) {
      merged.set(c, off);
      off += c.length;
    }
    const geom = new THREE.BufferGeometry();
    geom.setAttribute("position", new THREE.BufferAttribute(merged, 3));
    const mat = new THREE.LineBasicMaterial({
      color: STREAMLET_COLOR,
      transparent: true,
      opacity: 0.35,
    });
    this.scene.add(new THREE.LineSegments(geom, mat));
  }

  private rebuildOverlays(): void {
    this.overlays.clear();
    for (const [, h] of this.store.highlights) {
      const chunks: Float32Array[] = [];
      for (const [, poly] of h.polylines) chunks.push(polylineSegments(poly));
      const merged = new Float32Array(chunks.reduce((s, c) => s + c.length, 0));
      let off = 0;
      for (const c of chunks) {
        merged.set(c, off);
        off += c.length;
      }
      const geom = new THREE.BufferGeometry();
      geom.setAttribute("position", new THREE.BufferAttribute(merged, 3));
      const mat = new THREE.LineBasicMaterial({
        color: new THREE.Color(h.color),
        linewidth: 2,
      });
      this.overlays.add(new THREE.LineSegments(geom, mat));
    }
  }

  private resize(): void {
    const w = this.canvas.clientWidth || this.canvas.parentElement?.clientWidth || 800;
    const h = this.canvas.clientHeight || this.canvas.parentElement?.clientHeight || 600;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  }

  private loop = (): void => {
    if (!this.animating) return;
    this.controls.update();
    this.renderer.render(this.scene, this.camera);
    requestAnimationFrame(this.loop);
  };

  dispose(): void {
    this.animating = false;
    this.renderer.dispose();
  }
}
