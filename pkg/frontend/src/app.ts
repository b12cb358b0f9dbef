/**
 * Dashboard application: overview card grid with tabs, token+dropdown
 * filter bar, drill-down detail, cohort comparison, tracked-items panel,
 * and the forecast projection view with a live scenario slider.
 *
 * All displayed values come straight out of API responses. The only
 * client-side work is layout.
 */
import { ApiClient, ApiError, KpiDescriptor, KpiParams, KpiSeries } from './api.js';
import {
  FIELDS, FilterToken, opsForField, serializeTokens, validateToken,
} from './filters.js';
import { BarDatum, renderBarChart } from './charts.js';
import {
  DashboardState, DEFAULT_STATE, stateFromQuery, stateToQuery, visibleCards,
} from './state.js';

function h(doc: Document, tag: string, cls: string, textContent?: string): HTMLElement {
  const e = doc.createElement(tag);
  e.className = cls;
  if (textContent !== undefined) e.textContent = textContent;
  return e;
}

export class App {
  state: DashboardState;
  catalog: KpiDescriptor[] = [];
  /** Latest-query-wins: per-card sequence numbers discard stale responses. */
  private seq = new Map<string, number>();
  private doc: Document;

  constructor(public root: HTMLElement, public api: ApiClient,
              private win: Window = root.ownerDocument.defaultView as Window) {
    this.doc = root.ownerDocument;
    this.state = stateFromQuery(this.win.location.search.replace(/^\?/, ''));
    this.win.addEventListener('popstate', () => {
      this.state = stateFromQuery(this.win.location.search.replace(/^\?/, ''));
      void this.render();
    });
  }

  async start(): Promise<void> {
    this.catalog = await this.api.listKpis();
    await this.render();
  }

  private syncUrl(): void {
    const qs = stateToQuery(this.state);
    this.win.history.pushState(null, '', qs ? '?' + qs : this.win.location.pathname);
  }

  private setState(patch: Partial<DashboardState>): Promise<void> {
    this.state = { ...this.state, ...patch };
    this.syncUrl();
    return this.render();
  }

  private kpiParams(): KpiParams {
    return {
      from: this.state.from,
      to: this.state.to,
      bucket: this.state.bucket,
      filter: this.state.tokens.length ? serializeTokens(this.state.tokens) : undefined,
      cohort: this.state.cohort ?? undefined,
    };
  }

  async render(): Promise<void> {
    this.root.textContent = '';
    this.root.appendChild(this.renderNav());
    this.root.appendChild(this.renderFilterBar());
    const main = h(this.doc, 'main', 'view view-' + this.state.view);
    this.root.appendChild(main);
    switch (this.state.view) {
      case 'detail': await this.renderDetail(main); break;
      case 'compare': await this.renderCompare(main); break;
      case 'tracked': await this.renderTracked(main); break;
      case 'projection': await this.renderProjection(main); break;
      default: await this.renderOverview(main);
    }
  }

  private renderNav(): HTMLElement {
    const nav = h(this.doc, 'nav', 'tabs');
    for (const tab of ['Financial', 'Clinical'] as const) {
      const b = h(this.doc, 'button',
                  'tab' + (this.state.tab === tab ? ' active' : ''), tab);
      b.addEventListener('click', () => void this.setState({ tab, view: 'overview' }));
      nav.appendChild(b);
    }
    for (const [view, label] of [['tracked', 'Tracked items'],
                                 ['projection', 'Projections']] as const) {
      const b = h(this.doc, 'button',
                  'nav-' + view + (this.state.view === view ? ' active' : ''), label);
      b.addEventListener('click', () => void this.setState({ view }));
      nav.appendChild(b);
    }
    return nav;
  }

  private renderFilterBar(): HTMLElement {
    const bar = h(this.doc, 'div', 'filter-bar');
    this.state.tokens.forEach((t, i) => {
      const chip = h(this.doc, 'span', 'filter-token', `${t.field} ${t.op} ${t.value}`);
      chip.setAttribute('data-index', String(i));
      const remove = h(this.doc, 'button', 'token-remove', 'x');
      remove.addEventListener('click', () => {
        const tokens = this.state.tokens.filter((_, j) => j !== i);
        void this.setState({ tokens });
      });
      chip.appendChild(remove);
      bar.appendChild(chip);
    });

    const fieldSel = this.doc.createElement('select');
    fieldSel.className = 'token-field';
    for (const f of Object.keys(FIELDS)) {
      const o = this.doc.createElement('option');
      o.value = f;
      o.textContent = f;
      fieldSel.appendChild(o);
    }
    const opSel = this.doc.createElement('select');
    opSel.className = 'token-op';
    const fillOps = () => {
      opSel.textContent = '';
      for (const op of opsForField(fieldSel.value)) {
        const o = this.doc.createElement('option');
        o.value = op;
        o.textContent = op;
        opSel.appendChild(o);
      }
    };
    fillOps();
    fieldSel.addEventListener('change', fillOps);
    const valueInput = this.doc.createElement('input');
    valueInput.className = 'token-value';
    valueInput.placeholder = 'value';
    const add = h(this.doc, 'button', 'token-add', 'Add filter');
    const err = h(this.doc, 'span', 'filter-error', '');
    add.addEventListener('click', () => {
      const token: FilterToken = {
        field: fieldSel.value, op: opSel.value, value: valueInput.value,
      };
      const problem = validateToken(token);
      if (problem) {
        err.textContent = problem;
        return;
      }
      void this.setState({ tokens: [...this.state.tokens, token] });
    });
    bar.append(fieldSel, opSel, valueInput, add, err);
    return bar;
  }

  /** Highlight the token a server filter error points at, via its offset. */
  private markFilterError(e: ApiError): void {
    const err = this.root.querySelector('.filter-error');
    if (err) err.textContent = e.body.message;
    if (e.body.offset === undefined) return;
    const text = serializeTokens(this.state.tokens);
    let pos = 0;
    for (let i = 0; i < this.state.tokens.length; i++) {
      const piece = serializeTokens([this.state.tokens[i]]);
      if (e.body.offset < pos + piece.length) {
        const chip = this.root.querySelector(`.filter-token[data-index="${i}"]`);
        if (chip) chip.classList.add('token-invalid');
        return;
      }
      pos += piece.length + ' AND '.length;
      if (pos > text.length) break;
    }
  }

  private async renderOverview(main: HTMLElement): Promise<void> {
    const grid = h(this.doc, 'div', 'card-grid');
    main.appendChild(grid);
    const cards = visibleCards(this.state, this.catalog.map((k) => k.id));
    await Promise.all(cards.map((kpi) => this.renderCard(grid, kpi)));
    const more = h(this.doc, 'button', 'more-indicators',
                   this.state.moreIndicators ? 'Fewer indicators' : 'More indicators');
    more.addEventListener('click', () =>
      void this.setState({ moreIndicators: !this.state.moreIndicators }));
    main.appendChild(more);
  }

  private async renderCard(grid: HTMLElement, kpi: string): Promise<void> {
    const card = h(this.doc, 'section', 'card');
    card.setAttribute('data-kpi', kpi);
    const head = h(this.doc, 'header', 'card-head');
    const title = h(this.doc, 'h2', 'card-title', kpi);
    const arrow = h(this.doc, 'button', 'modify-arrow', '→');
    arrow.setAttribute('aria-label', 'modify ' + kpi);
    arrow.addEventListener('click', () =>
      void this.setState({ view: 'detail', detailKpi: kpi }));
    head.append(title, arrow);
    card.appendChild(head);
    grid.appendChild(card);

    const mySeq = (this.seq.get(kpi) ?? 0) + 1;
    this.seq.set(kpi, mySeq);
    try {
      const series = await this.api.kpiSeries(kpi, this.kpiParams());
      if (this.seq.get(kpi) !== mySeq) return;
      card.appendChild(this.chartFor(kpi, series));
    } catch (e) {
      if (this.seq.get(kpi) !== mySeq) return;
      const msg = e instanceof ApiError ? e.body.message : String(e);
      card.appendChild(h(this.doc, 'div', 'card-error', msg));
      if (e instanceof ApiError && e.body.code === 'filter_syntax_error') {
        this.markFilterError(e);
      }
    }
  }

  private chartFor(kpi: string, series: KpiSeries): SVGElement {
    const data: BarDatum[] = [];
    for (const b of series.buckets) {
      for (const [stratum, cell] of Object.entries(b.strata)) {
        data.push({
          label: b.bucket_start.slice(0, 10),
          value: cell.value,
          series: stratum === 'all' ? undefined : stratum,
        });
      }
    }
    return renderBarChart(this.doc, data, {
      title: kpi,
      onBarClick: (d) => void this.drillDown(kpi, d.label),
    });
  }

  /** Clicking a bucket narrows the date range and opens the detail view. */
  async drillDown(kpi: string, bucketStart: string): Promise<void> {
    const from = bucketStart + 'T00:00:00Z';
    const start = new Date(from);
    const end = new Date(start);
    if (this.state.bucket === 'DAY') end.setUTCDate(end.getUTCDate() + 1);
    else if (this.state.bucket === 'WEEK') end.setUTCDate(end.getUTCDate() + 7);
    else end.setUTCMonth(end.getUTCMonth() + 1);
    const to = end.toISOString().replace(/\.\d{3}Z$/, 'Z');
    await this.setState({ view: 'detail', detailKpi: kpi, from, to });
  }

  private async renderDetail(main: HTMLElement): Promise<void> {
    const kpi = this.state.detailKpi ?? 'AVG_LOS';
    const back = h(this.doc, 'button', 'back', 'Back to overview');
    back.addEventListener('click', () => void this.setState({ view: 'overview' }));
    main.appendChild(back);
    const grid = h(this.doc, 'div', 'card-grid');
    main.appendChild(grid);
    await this.renderCard(grid, kpi);

    const list = h(this.doc, 'table', 'episode-list');
    const headRow = h(this.doc, 'tr', '');
    for (const col of ['episode', 'patient', 'department', 'LOS', 'margin']) {
      headRow.appendChild(h(this.doc, 'th', '', col));
    }
    list.appendChild(headRow);
    main.appendChild(list);
    try {
      const episodes = await this.api.episodes(this.kpiParams());
      for (const ep of episodes) {
        const row = h(this.doc, 'tr', 'episode-row');
        row.appendChild(h(this.doc, 'td', '', ep.episode_id));
        row.appendChild(h(this.doc, 'td', '', ep.patient_id));
        row.appendChild(h(this.doc, 'td', '', ep.primary_department ?? 'unknown'));
        row.appendChild(h(this.doc, 'td', '',
          ep.derived.length_of_stay_days === null
            ? 'open' : String(ep.derived.length_of_stay_days)));
        row.appendChild(h(this.doc, 'td', '', ep.derived.contribution_margin));
        list.appendChild(row);
      }
    } catch (e) {
      const msg = e instanceof ApiError ? e.body.message : String(e);
      main.appendChild(h(this.doc, 'div', 'card-error', msg));
    }
  }

  private async renderCompare(main: HTMLElement): Promise<void> {
    const kpi = this.state.detailKpi ?? 'AVG_LOS';
    const cohort = this.state.cohort;
    if (!cohort) {
      main.appendChild(h(this.doc, 'div', 'empty-state', 'Select a cohort to compare'));
      return;
    }
    try {
      const result = await this.api.compare(kpi, { ...this.kpiParams(), cohort });
      const data: BarDatum[] = [];
      const pairs: [string, KpiSeries][] = [
        [cohort, result.cohort], ['hospital average', result.hospital],
      ];
      for (const [name, series] of pairs) {
        for (const b of series.buckets) {
          data.push({
            label: b.bucket_start.slice(0, 10),
            value: b.strata.all?.value ?? null,
            series: name,
          });
        }
      }
      if (result.cohort.buckets.every((b) => (b.strata.all?.n ?? 0) === 0)) {
        main.appendChild(h(this.doc, 'div', 'empty-state',
                           'No episodes in this cohort for the selected window'));
      }
      main.appendChild(renderBarChart(this.doc, data,
                       { title: `${kpi}: ${cohort} vs hospital average` }));
    } catch (e) {
      const msg = e instanceof ApiError ? e.body.message : String(e);
      main.appendChild(h(this.doc, 'div', 'card-error', msg));
    }
  }

  private async renderTracked(main: HTMLElement): Promise<void> {
    const panel = h(this.doc, 'div', 'tracked-panel');
    main.appendChild(panel);
    try {
      const items = await this.api.trackedStatus();
      for (const item of items) {
        const row = h(this.doc, 'div', 'tracked-item');
        row.appendChild(h(this.doc, 'span', 'tracked-name', item.name));
        row.appendChild(h(this.doc, 'span',
          'badge badge-' + item.status.toLowerCase().replace('_', '-'), item.status));
        const current = item.value_absent || item.current_value === null
          ? 'n/a' : String(item.current_value);
        row.appendChild(h(this.doc, 'span', 'tracked-current', current));
        row.appendChild(h(this.doc, 'span', 'tracked-target',
          `target ${item.direction === 'AT_MOST' ? '<=' : '>='} ${item.target}`));
        panel.appendChild(row);
      }
      if (!items.length) {
        panel.appendChild(h(this.doc, 'div', 'empty-state', 'No tracked items yet'));
      }
    } catch (e) {
      const msg = e instanceof ApiError ? e.body.message : String(e);
      panel.appendChild(h(this.doc, 'div', 'card-error', msg));
    }
  }

  private async renderProjection(main: HTMLElement): Promise<void> {
    const kpi = this.state.projectionKpi;
    const controls = h(this.doc, 'div', 'projection-controls');
    const label = h(this.doc, 'label', 'scenario-label',
                    `scenario x${this.state.scenario.toFixed(2)}`);
    const slider = this.doc.createElement('input');
    slider.type = 'range';
    slider.className = 'scenario-slider';
    slider.min = '0.5';
    slider.max = '1.5';
    slider.step = '0.05';
    slider.value = String(this.state.scenario);
    slider.addEventListener('input', () =>
      void this.setState({ scenario: parseFloat(slider.value) }));
    controls.append(label, slider);
    main.appendChild(controls);

    const holder = h(this.doc, 'div', 'projection-chart');
    main.appendChild(holder);
    const mySeq = (this.seq.get('__forecast__') ?? 0) + 1;
    this.seq.set('__forecast__', mySeq);
    try {
      const fc = await this.api.forecast(kpi, this.kpiParams(),
                                         this.state.horizon, this.state.scenario);
      if (this.seq.get('__forecast__') !== mySeq) return;
      const data: BarDatum[] = [
        ...fc.history.map((p) => ({
          label: p.bucket_start.slice(0, 10), value: p.value,
        })),
        ...fc.projections.map((p) => ({
          label: p.bucket_start.slice(0, 10), value: p.value, projected: true,
        })),
      ];
      holder.appendChild(renderBarChart(this.doc, data, {
        title: `${kpi} projection (x${fc.scenario_multiplier})`,
      }));
    } catch (e) {
      if (this.seq.get('__forecast__') !== mySeq) return;
      const msg = e instanceof ApiError ? e.body.message : String(e);
      holder.appendChild(h(this.doc, 'div', 'card-error', msg));
    }
  }
}

export { DEFAULT_STATE };

export function mount(root: HTMLElement, base = ''): App {
  const app = new App(root, new ApiClient(base));
  void app.start();
  return app;
}
