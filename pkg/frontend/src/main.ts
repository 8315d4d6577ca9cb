/**
 * DOM wiring for the merge-review screen: a side-by-side image grid per
 * subject pair, same/different/skip controls with keyboard shortcuts, a
 * progress bar fed by the server, and a retry banner when it is unreachable.
 */
import { ReviewApi } from './api.js';
import { ReviewQueue } from './queue.js';
import type { CandidateDetail, CandidateImage } from './types.js';

const PLACEHOLDER =
  'data:image/svg+xml;utf8,' +
  encodeURIComponent(
    '<svg xmlns="http://www.w3.org/2000/svg" width="160" height="160">' +
      '<rect width="160" height="160" fill="#ddd"/>' +
      '<text x="80" y="85" font-size="14" text-anchor="middle" fill="#666">' +
      'no image</text></svg>',
  );

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function imageCell(image: CandidateImage): HTMLElement {
  const img = document.createElement('img');
  img.src = image.url;
  img.alt = image.image_id;
  img.title = image.source_path || image.image_id;
  img.addEventListener('error', () => {
    img.src = PLACEHOLDER;
  });
  const cell = document.createElement('figure');
  cell.className = 'thumb';
  cell.appendChild(img);
  const caption = document.createElement('figcaption');
  caption.textContent = image.image_id;
  cell.appendChild(caption);
  return cell;
}

function renderSide(container: HTMLElement, subject: string, images: CandidateImage[]): void {
  container.replaceChildren();
  const title = document.createElement('h2');
  title.textContent = subject;
  container.appendChild(title);
  const grid = document.createElement('div');
  grid.className = 'grid';
  for (const image of images) {
    grid.appendChild(imageCell(image));
  }
  container.appendChild(grid);
}

async function start(): Promise<void> {
  const api = new ReviewApi();
  const queue = new ReviewQueue(api, 'ui-operator');
  const banner = el<HTMLDivElement>('banner');
  const scoreLabel = el<HTMLDivElement>('score');
  const progressLabel = el<HTMLDivElement>('progress');
  const leftPane = el<HTMLDivElement>('left');
  const rightPane = el<HTMLDivElement>('right');
  const doneView = el<HTMLDivElement>('done');
  const pairView = el<HTMLDivElement>('pair');

  async function refresh(): Promise<void> {
    const state = queue.state();
    banner.hidden = !state.offline;
    if (state.offline) {
      banner.textContent = `service unreachable, retrying... (${state.lastError ?? ''})`;
    }
    progressLabel.textContent =
      `${state.progress.decided} / ${state.progress.total} decided`;
    if (state.current === null) {
      pairView.hidden = true;
      doneView.hidden = !state.progress.complete;
      return;
    }
    pairView.hidden = false;
    doneView.hidden = true;
    const { subject_a, subject_b, mean_score } = state.current;
    scoreLabel.textContent =
      `${subject_a}  vs  ${subject_b}  -  mean similarity ${mean_score.toFixed(4)}`;
    try {
      const detail: CandidateDetail = await api.candidate(subject_a, subject_b);
      renderSide(leftPane, subject_a, detail.images[subject_a] ?? []);
      renderSide(rightPane, subject_b, detail.images[subject_b] ?? []);
    } catch {
      renderSide(leftPane, subject_a, []);
      renderSide(rightPane, subject_b, []);
    }
  }

  async function act(action: 'same' | 'different' | 'skip'): Promise<void> {
    if (action === 'skip') {
      queue.skip();
    } else {
      await queue.decide(action === 'same' ? 'same_person' : 'different_person');
    }
    if (queue.state().offline) {
      await queue.load(); // resync after a failed post
    }
    await refresh();
  }

  el<HTMLButtonElement>('btn-same').addEventListener('click', () => void act('same'));
  el<HTMLButtonElement>('btn-diff').addEventListener('click', () => void act('different'));
  el<HTMLButtonElement>('btn-skip').addEventListener('click', () => void act('skip'));
  document.addEventListener('keydown', (event) => {
    if (event.key === 's') void act('same');
    else if (event.key === 'd') void act('different');
    else if (event.key === 'k') void act('skip');
  });

  await queue.load();
  await refresh();
  // Keep retrying while unreachable so a restarted service picks back up.
  setInterval(() => {
    if (queue.state().offline) {
      void queue.load().then(refresh);
    }
  }, 2000);
}

void start();
