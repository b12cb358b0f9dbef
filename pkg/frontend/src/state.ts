/**
 * Dashboard state and its round-trip through the URL query string. The URL
 * is the only persistence: any state serializes to a shareable link that
 * reproduces the same rendered view.
 */
import { FilterToken, parseTokens, serializeTokens } from './filters.js';

export type DomainTab = 'Financial' | 'Clinical';
export type Bucket = 'DAY' | 'WEEK' | 'MONTH';

export interface DashboardState {
  tab: DomainTab;
  from: string;
  to: string;
  bucket: Bucket;
  tokens: FilterToken[];
  cohort: string | null;
  moreIndicators: boolean;
  view: 'overview' | 'detail' | 'compare' | 'tracked' | 'projection';
  detailKpi: string | null;
  projectionKpi: string;
  horizon: number;
  scenario: number;
}

export const DEFAULT_STATE: DashboardState = {
  tab: 'Financial',
  from: '2015-03-01T00:00:00Z',
  to: '2015-06-01T00:00:00Z',
  bucket: 'MONTH',
  tokens: [],
  cohort: null,
  moreIndicators: false,
  view: 'overview',
  detailKpi: null,
  projectionKpi: 'REVENUE',
  horizon: 2,
  scenario: 1.0,
};

export function stateToQuery(s: DashboardState): string {
  const p = new URLSearchParams();
  if (s.tab !== DEFAULT_STATE.tab) p.set('tab', s.tab);
  if (s.from !== DEFAULT_STATE.from) p.set('from', s.from);
  if (s.to !== DEFAULT_STATE.to) p.set('to', s.to);
  if (s.bucket !== DEFAULT_STATE.bucket) p.set('bucket', s.bucket);
  if (s.tokens.length) p.set('filter', serializeTokens(s.tokens));
  if (s.cohort) p.set('cohort', s.cohort);
  if (s.moreIndicators) p.set('more', '1');
  if (s.view !== 'overview') p.set('view', s.view);
  if (s.detailKpi) p.set('kpi', s.detailKpi);
  if (s.projectionKpi !== DEFAULT_STATE.projectionKpi) p.set('pkpi', s.projectionKpi);
  if (s.horizon !== DEFAULT_STATE.horizon) p.set('horizon', String(s.horizon));
  if (s.scenario !== DEFAULT_STATE.scenario) p.set('scenario', String(s.scenario));
  return p.toString();
}

export function stateFromQuery(query: string): DashboardState {
  const p = new URLSearchParams(query);
  const s: DashboardState = { ...DEFAULT_STATE, tokens: [] };
  const tab = p.get('tab');
  if (tab === 'Financial' || tab === 'Clinical') s.tab = tab;
  if (p.get('from')) s.from = p.get('from')!;
  if (p.get('to')) s.to = p.get('to')!;
  const bucket = p.get('bucket');
  if (bucket === 'DAY' || bucket === 'WEEK' || bucket === 'MONTH') s.bucket = bucket;
  const filter = p.get('filter');
  if (filter) s.tokens = parseTokens(filter) ?? [];
  s.cohort = p.get('cohort');
  s.moreIndicators = p.get('more') === '1';
  const view = p.get('view');
  if (view === 'detail' || view === 'compare' || view === 'tracked'
      || view === 'projection' || view === 'overview') {
    s.view = view;
  }
  s.detailKpi = p.get('kpi');
  if (p.get('pkpi')) s.projectionKpi = p.get('pkpi')!;
  if (p.get('horizon')) s.horizon = Math.max(1, parseInt(p.get('horizon')!, 10) || 1);
  if (p.get('scenario')) s.scenario = parseFloat(p.get('scenario')!) || 1.0;
  return s;
}

/** Per-tab card sets; "More indicators" reveals the rest of the catalog. */
export const TAB_CARDS: Record<DomainTab, string[]> = {
  Financial: ['REVENUE', 'COSTS', 'CONTRIBUTION_MARGIN'],
  Clinical: ['AVG_LOS', 'MORTALITY_RATE', 'OCCUPANCY_RATE', 'ADMISSION_COUNT'],
};

export function visibleCards(s: DashboardState, catalog: string[]): string[] {
  const base = TAB_CARDS[s.tab].filter((k) => catalog.includes(k));
  if (!s.moreIndicators) return base;
  return base.concat(catalog.filter((k) => !base.includes(k)));
}
