/**
 * Typed client for the analytics HTTP API. Every number shown anywhere in
 * the dashboard comes out of one of these calls; nothing is computed
 * client-side.
 */

export interface StratumCell {
  value: number | null;
  n: number;
}

export interface SeriesBucket {
  bucket_start: string;
  strata: Record<string, StratumCell>;
}

export interface KpiSeries {
  query: {
    kpi: string;
    from: string;
    to: string;
    bucket: string;
    group_by: string[];
    filter: string | null;
    cohort: string | null;
  };
  buckets: SeriesBucket[];
}

export interface KpiDescriptor {
  id: string;
  unit: string;
  valid_range: [number | null, number | null];
  formula_doc: string;
}

export interface CompareResult {
  cohort: KpiSeries;
  hospital: KpiSeries;
}

export interface ForecastPoint {
  bucket_start: string;
  value: number | null;
}

export interface ForecastResult {
  kpi: string;
  method: string;
  scenario_multiplier: number;
  history: ForecastPoint[];
  projections: { bucket_start: string; value: number }[];
}

export interface TrackedStatus {
  item_id: string;
  name: string;
  kpi: string;
  current_value: number | null;
  current_bucket: string | null;
  target: number;
  direction: 'AT_MOST' | 'AT_LEAST';
  status: 'ON_TRACK' | 'AT_RISK';
  value_absent: boolean;
}

export interface EpisodeDoc {
  episode_id: string;
  patient_id: string;
  admission_time: string | null;
  discharge_time: string | null;
  open: boolean;
  primary_department: string | null;
  derived: {
    length_of_stay_days: number | null;
    total_charges: string;
    total_costs: string;
    contribution_margin: string;
    died: boolean;
  };
}

export interface ApiErrorBody {
  status: number;
  code: string;
  message: string;
  offset?: number;
}

export class ApiError extends Error {
  constructor(public body: ApiErrorBody) {
    super(body.message);
  }
}

export interface KpiParams {
  from: string;
  to: string;
  bucket?: string;
  group_by?: string;
  filter?: string;
  cohort?: string;
}

export class ApiClient {
  constructor(private base: string = '') {}

  private async get<T>(path: string, params?: Record<string, string>): Promise<T> {
    const qs = params ? '?' + new URLSearchParams(params).toString() : '';
    const res = await fetch(this.base + path + qs);
    const body = await res.json();
    if (!res.ok) throw new ApiError(body as ApiErrorBody);
    return body as T;
  }

  listKpis(): Promise<KpiDescriptor[]> {
    return this.get('/kpis');
  }

  kpiSeries(kpi: string, params: KpiParams): Promise<KpiSeries> {
    return this.get(`/kpi/${kpi}`, clean(params));
  }

  compare(kpi: string, params: KpiParams): Promise<CompareResult> {
    return this.get(`/kpi/${kpi}/compare`, clean(params));
  }

  forecast(kpi: string, params: KpiParams, horizon: number,
           scenario: number): Promise<ForecastResult> {
    return this.get(`/kpi/${kpi}/forecast`, {
      ...clean(params),
      horizon: String(horizon),
      scenario: String(scenario),
    });
  }

  episodes(params: KpiParams & { limit?: string }): Promise<EpisodeDoc[]> {
    return this.get('/episodes', clean(params));
  }

  trackedStatus(): Promise<TrackedStatus[]> {
    return this.get('/tracked/status');
  }
}

function clean(params: object): Record<string, string> {
  const out: Record<string, string> = {};
  for (const [k, v] of Object.entries(params)) {
    if (v !== undefined && v !== null && v !== '') out[k] = String(v);
  }
  return out;
}
