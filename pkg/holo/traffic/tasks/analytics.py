"""
Validation metrics computed from loop, floating-car and trip data.

Flow-based checks fit the speed-density relation to loop measurements and
compare count and travel-time series; trip-based checks profile each
traveler's temporal and spatial concentration and the distribution of
travelled distance.
"""

import logging
import math
from collections import defaultdict, namedtuple

import luigi
import numpy as np
import pandas as pd
import yaml
from scipy.optimize import least_squares, minimize_scalar
from sklearn.cluster import DBSCAN

from holo.traffic.tasks import ingest, netmodel, tripbuild
from holo.traffic.tasks.exceptions import FitError, InputError
from holo.traffic.tasks.url import ExternalURL, UncheckedExternalURL, get_target_from_url, url_path_join
from holo.traffic.tasks.util.overwrite import OverwriteOutputMixin

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
SECONDS_PER_DAY = 86400
MIN_FIT_SAMPLES = 10
UNKNOWN_ZONE = 'unknown'
PERCENTILE = 85

FdFit = namedtuple('FdFit', ['q_m_hat', 'k_j_hat', 'v_f_hat', 'k_m_hat', 'residual_norm'])

CountComparison = namedtuple('CountComparison', ['correlation', 'rmse', 'samples'])

TravelTimeProfileComparison = namedtuple('TravelTimeProfileComparison', [
    'correlation', 'fcd_intervals', 'probe_intervals',
])

LorenzCurve = namedtuple('LorenzCurve', ['population_share', 'distance_share', 'top_share'])
"""Cumulative shares of travelers sorted by decreasing distance; `top_share` is the top 1% distance share."""

TravelerTrip = namedtuple('TravelerTrip', ['departure', 'origin_zone', 'destination_zone', 'distance_km'])

TravelerProfile = namedtuple('TravelerProfile', [
    'traveler_id', 'trips', 'active_days', 'dts_85', 'odz_85', 'distance_km',
    'commuter', 'commercial', 'temporally_concentrated', 'spatially_concentrated', 'regular', 'classifiable',
])

PROFILE_FLAGS = ('commuter', 'commercial', 'temporally_concentrated', 'spatially_concentrated', 'regular')


class ClassThresholds(namedtuple('ClassThresholds', [
        'eps', 'min_pts', 'count_noise', 'min_active_days', 'morning', 'evening'])):
    """
    Settings of the traveler classification.

    `eps` is in minutes; `morning` and `evening` are the commute windows as
    (first, last) minute of the day.
    """

    __slots__ = ()

    @classmethod
    def from_config(cls):
        config = luigi.configuration.get_config()
        return cls(
            eps=config.getfloat('analytics', 'dts_eps', 45.0),
            min_pts=config.getint('analytics', 'dts_min_pts', 3),
            count_noise=config.getboolean('analytics', 'dts_count_noise', False),
            min_active_days=config.getint('analytics', 'min_active_days', 7),
            morning=parse_window(config.get('analytics', 'morning_window', '390-570')),
            evening=parse_window(config.get('analytics', 'evening_window', '990-1170')),
        )


DEFAULT_THRESHOLDS = ClassThresholds(45.0, 3, False, 7, (390, 570), (990, 1170))


def parse_window(text):
    """Parse a 'first-last' minute-of-day window."""
    try:
        first, last = [int(part) for part in text.split('-')]
    except ValueError:
        raise InputError('invalid time window {0!r}, expected minutes like 390-570'.format(text))
    return (first, last)


def speed_density_curve(k, k_j, v_f, alpha, beta):
    """Speed at density k, zero beyond the jam density."""
    ratio = np.clip(np.asarray(k, dtype=float) / k_j, 0.0, 1.0)
    return v_f * (1.0 - ratio ** beta) ** alpha


def loop_rows_to_samples(rows, lane_count=1):
    """
    (density veh/m, speed m/s) samples from loop rows.

    Density follows from flow over the harmonic mean speed; rows without
    vehicles or with a zero speed carry no sample.
    """
    samples = []
    for row in rows:
        if row.count <= 0 or row.harmonic_speed <= 0:
            continue
        speed = row.harmonic_speed / 3.6
        flow = row.count / float(row.interval) / lane_count
        samples.append((flow / speed, speed))
    return samples


def fit_fundamental_diagram(samples, alpha=1.0, beta=0.05):
    """
    Least-squares fit of jam density and free-flow speed to (k, v) samples.

    The shape exponents stay fixed.  The capacity is the maximum flow
    k * v(k) along the fitted curve.

    Raises:
        FitError: with fewer than ten samples, a single density, or a failed solve.
    """
    samples = np.asarray(samples, dtype=float)
    if len(samples) < MIN_FIT_SAMPLES:
        raise FitError('need at least {0} samples, got {1}'.format(MIN_FIT_SAMPLES, len(samples)))
    k, v = samples[:, 0], samples[:, 1]
    if np.any(k < 0) or np.any(v < 0):
        raise FitError('densities and speeds must not be negative')
    if np.ptp(k) <= 1e-9 * max(1.0, np.max(k)):
        raise FitError('all samples share one density')

    def residuals(params):
        return speed_density_curve(k, params[0], params[1], alpha, beta) - v

    k_j_start = np.max(k) * 1.2
    shape = speed_density_curve(k, k_j_start, 1.0, alpha, beta)
    v_f_start = max(float(np.dot(shape, v) / np.dot(shape, shape)), 1e-3)
    start = [k_j_start, v_f_start]
    try:
        result = least_squares(
            residuals, start, bounds=([np.max(k) * 1e-3, 0.0], [np.inf, np.inf]),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000,
        )
    except ValueError as exc:
        raise FitError('fit failed: {0}'.format(exc))
    if not result.success:
        raise FitError('fit failed: {0}'.format(result.message))
    k_j, v_f = result.x

    peak = minimize_scalar(
        lambda density: -density * speed_density_curve(density, k_j, v_f, alpha, beta),
        bounds=(0.0, k_j), method='bounded', options={'xatol': 1e-12},
    )
    fit = FdFit(
        q_m_hat=float(-peak.fun), k_j_hat=float(k_j), v_f_hat=float(v_f), k_m_hat=float(peak.x),
        residual_norm=float(np.linalg.norm(result.fun)),
    )
    log.info('Fitted k_j=%.4f veh/m, v_f=%.2f m/s, capacity %.3f veh/s', fit.k_j_hat, fit.v_f_hat, fit.q_m_hat)
    return fit


def _circular_distances(minutes):
    gaps = np.abs(minutes[:, None] - minutes[None, :])
    return np.minimum(gaps, MINUTES_PER_DAY - gaps)


def departure_labels(minutes, eps=45.0, min_pts=3):
    """DBSCAN labels of departure minutes on the daily circle; -1 marks noise."""
    minutes = np.mod(np.asarray(minutes, dtype=float), MINUTES_PER_DAY)
    if len(minutes) == 0:
        return np.array([], dtype=int)
    clustering = DBSCAN(eps=eps, min_samples=min_pts, metric='precomputed')
    return clustering.fit(_circular_distances(minutes)).labels_


def departure_time_sections(minutes, eps=45.0, min_pts=3, count_noise=False):
    """
    Number of departure time sections among time-of-day minutes.

    Sections are density-based clusters on the daily circle, so departures
    just before and after midnight can share one.  Noise points are left out
    unless `count_noise` is set, in which case each counts as a section.
    """
    labels = departure_labels(minutes, eps, min_pts)
    sections = len(set(labels.tolist()) - set([-1]))
    if count_noise:
        sections += int(np.sum(labels == -1))
    return sections


def od_zone_count(trips, zone_of=None):
    """
    Distinct zones among the origins and destinations of `trips`.

    `trips` are (origin, destination) pairs looked up in the `zone_of`
    mapping; unmapped endpoints count as one reserved unknown zone.  Without
    a mapping the endpoints are zones already.
    """
    zones = set()
    unmapped = set()
    for origin, destination in trips:
        for endpoint in (origin, destination):
            if zone_of is None:
                zones.add(endpoint)
            elif endpoint in zone_of:
                zones.add(zone_of[endpoint])
            else:
                unmapped.add(endpoint)
                zones.add(UNKNOWN_ZONE)
    if unmapped:
        log.warning('Endpoints outside every zone counted as %r: %s', UNKNOWN_ZONE, ', '.join(sorted(unmapped)))
    return len(zones)


def nearest_rank_percentile(values, percentile=PERCENTILE):
    """The nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    ordered = sorted(values)
    if not ordered:
        raise InputError('percentile of an empty series')
    rank = max(1, int(math.ceil(percentile / 100.0 * len(ordered))))
    return ordered[rank - 1]


def _day_minutes(departure):
    return int(departure // SECONDS_PER_DAY), (departure % SECONDS_PER_DAY) / 60.0


def _circular_mean(minutes):
    angles = np.asarray(minutes) * 2 * np.pi / MINUTES_PER_DAY
    mean = np.arctan2(np.mean(np.sin(angles)), np.mean(np.cos(angles)))
    return float(np.mod(mean * MINUTES_PER_DAY / (2 * np.pi), MINUTES_PER_DAY))


def _in_window(minute, window):
    return window[0] <= minute <= window[1]


def profile_traveler(traveler_id, trips, commercial=False, thresholds=DEFAULT_THRESHOLDS):
    """
    Classify one traveler from a month of trips.

    Departures of the whole month are clustered into sections; a day's DTS
    is the number of sections its trips leave in, and its ODZ the number of
    distinct zones it touches.
    """
    days = defaultdict(list)
    minutes = []
    for trip in trips:
        day, minute = _day_minutes(trip.departure)
        days[day].append(len(minutes))
        minutes.append(minute)
    labels = departure_labels(minutes, thresholds.eps, thresholds.min_pts)
    distance = float(sum(trip.distance_km for trip in trips))

    dts_series = []
    odz_series = []
    for day in sorted(days):
        day_labels = [int(labels[index]) for index in days[day]]
        sections = set(label for label in day_labels if label != -1)
        count = len(sections)
        if thresholds.count_noise:
            count += sum(1 for label in day_labels if label == -1)
        dts_series.append(count)
        odz_series.append(od_zone_count(
            [(trips[index].origin_zone, trips[index].destination_zone) for index in days[day]]
        ))

    if len(days) < thresholds.min_active_days:
        return TravelerProfile(
            traveler_id, len(trips), len(days), None, None, distance, False, commercial, False, False, commercial,
            False,
        )

    dts_85 = nearest_rank_percentile(dts_series)
    odz_85 = nearest_rank_percentile(odz_series)
    centers = [
        _circular_mean([minutes[index] for index in range(len(minutes)) if labels[index] == label])
        for label in sorted(set(labels.tolist()) - set([-1]))
    ]
    commuter = (
        dts_85 == 2
        and any(_in_window(center, thresholds.morning) for center in centers)
        and any(_in_window(center, thresholds.evening) for center in centers)
    )
    temporally = dts_85 in (2, 3, 4)
    spatially = odz_85 < 5
    return TravelerProfile(
        traveler_id=traveler_id,
        trips=len(trips),
        active_days=len(days),
        dts_85=dts_85,
        odz_85=odz_85,
        distance_km=distance,
        commuter=commuter,
        commercial=commercial,
        temporally_concentrated=temporally,
        spatially_concentrated=spatially,
        regular=commuter or commercial or temporally or spatially,
        classifiable=True,
    )


def concentration_and_classes(activities, commercial_ids=(), thresholds=DEFAULT_THRESHOLDS):
    """
    Profile every traveler and aggregate the class shares.

    Args:
        activities: mapping of traveler ID to its list of TravelerTrip.

    Returns:
        (profiles sorted by traveler ID, shares) where shares maps each class
        to its share of classifiable travelers and of their distance.
    """
    commercial_ids = set(commercial_ids)
    profiles = [
        profile_traveler(traveler_id, activities[traveler_id], traveler_id in commercial_ids, thresholds)
        for traveler_id in sorted(activities)
    ]
    classified = [profile for profile in profiles if profile.classifiable]
    total_distance = sum(profile.distance_km for profile in classified)
    shares = {'travelers': len(classified), 'unclassifiable': len(profiles) - len(classified)}
    for flag in PROFILE_FLAGS:
        members = [profile for profile in classified if getattr(profile, flag)]
        shares[flag] = {
            'traveler_share': len(members) / float(len(classified)) if classified else 0.0,
            'distance_share': (sum(profile.distance_km for profile in members) / total_distance
                               if total_distance > 0 else 0.0),
        }
    return profiles, shares


def lorenz_curve(distances):
    """
    Lorenz curve of travelled distance, travelers sorted by decreasing distance.

    Raises:
        InputError: on a negative distance, or when nobody travelled.
    """
    values = np.sort(np.asarray(distances, dtype=float))[::-1]
    if len(values) == 0 or np.any(values < 0):
        raise InputError('distances must be a non-empty list of non-negative values')
    total = values.sum()
    if not total > 0:
        raise InputError('all distances are zero')
    population = np.arange(len(values) + 1) / float(len(values))
    cumulative = np.concatenate([[0.0], np.cumsum(values) / total])
    cumulative[-1] = 1.0
    top = int(math.ceil(0.01 * len(values)))
    return LorenzCurve(population, cumulative, float(cumulative[top]))


def compare_count_series(first, second, interval):
    """
    Pearson correlation and RMSE in veh/min of two count series on their common index.

    Both series hold vehicle counts per `interval` seconds.
    """
    joined = pd.concat([first, second], axis=1, join='inner').dropna()
    if len(joined) < 2:
        raise InputError('count series share fewer than two intervals')
    per_minute = joined.astype(float) * (60.0 / interval)
    difference = per_minute.iloc[:, 0] - per_minute.iloc[:, 1]
    return CountComparison(
        correlation=float(per_minute.iloc[:, 0].corr(per_minute.iloc[:, 1])),
        rmse=float(np.sqrt(np.mean(difference ** 2))),
        samples=len(joined),
    )


def normalized_travel_time_profile(series, freq='15min'):
    """
    Week-averaged travel time profile, normalized to zero mean and unit variance.

    Args:
        series: travel times indexed by a DatetimeIndex.

    Returns:
        A Series indexed by (weekday, minute of day).
    """
    if len(series) == 0:
        raise InputError('empty travel time series')
    binned = series.resample(freq).mean().dropna()
    index = binned.index
    profile = binned.groupby([index.dayofweek, index.hour * 60 + index.minute]).mean()
    profile.index.names = ['weekday', 'minute']
    spread = profile.std(ddof=0)
    centered = profile - profile.mean()
    return centered / spread if spread > 0 else centered


def profile_correlation(first, second):
    """Pearson correlation of two profiles over their common bins."""
    joined = pd.concat([first, second], axis=1, join='inner').dropna()
    if len(joined) < 2:
        raise InputError('profiles share fewer than two bins')
    return float(joined.iloc[:, 0].corr(joined.iloc[:, 1]))


def fcd_segment_travel_times(fcd_rows, lengths, interval, max_gap=60.0):
    """
    Segment travel times from floating-car samples.

    Samples of one probe on one segment form a passage until the distance to
    the downstream end grows again or two samples lie more than `max_gap`
    seconds apart.  Each passage contributes the time it took to cover the
    sampled distance, scaled to the whole segment length, to the interval of
    its first sample.

    Returns:
        A DataFrame with columns road_id, interval_start, travel_time, probes.
    """
    columns = ['road_id', 'interval_start', 'travel_time', 'probes']
    frame = pd.DataFrame(list(fcd_rows), columns=ingest.FCD.row_class._fields)
    if frame.empty:
        return pd.DataFrame(columns=columns)
    frame = frame.sort_values(['road_id', 'vehicle_id', 'time']).reset_index(drop=True)
    same_probe = (frame['road_id'] == frame['road_id'].shift()) & (frame['vehicle_id'] == frame['vehicle_id'].shift())
    continues = same_probe & (frame['time'].diff() <= max_gap) & (frame['distance'].diff() <= 0)
    frame['passage'] = (~continues).cumsum()
    passages = frame.groupby(['road_id', 'vehicle_id', 'passage']).agg(
        first_time=('time', 'first'), last_time=('time', 'last'),
        first_distance=('distance', 'first'), last_distance=('distance', 'last'),
    ).reset_index()
    passages['covered'] = passages['first_distance'] - passages['last_distance']
    passages = passages[passages['covered'] > 0]
    passages = passages[passages['road_id'].isin(list(lengths))]
    if passages.empty:
        return pd.DataFrame(columns=columns)
    length = passages['road_id'].map(lengths)
    passages['travel_time'] = (passages['last_time'] - passages['first_time']) * length / passages['covered']
    passages['interval_start'] = (passages['first_time'] // interval) * interval
    result = passages.groupby(['road_id', 'interval_start']).agg(
        travel_time=('travel_time', 'mean'), probes=('vehicle_id', 'count'),
    ).reset_index()
    return result[columns]


def loop_count_series(rows):
    """
    Vehicle counts per interval start of one loop file, summed over movements.

    Returns:
        (counts, interval): a Series indexed by interval start and the interval in seconds.
    """
    frame = pd.DataFrame(list(rows), columns=ingest.LOOP.row_class._fields)
    if frame.empty:
        raise InputError('no loop rows to compare')
    intervals = sorted(frame['interval'].unique())
    if len(intervals) != 1:
        raise InputError('loop rows mix intervals {0}'.format(intervals))
    return frame.groupby('from_time')['count'].sum(), int(intervals[0])


def flow_consistency(rows, reference_rows):
    """Compare the counts of a loop with those of a reference loop on the same line."""
    counts, interval = loop_count_series(rows)
    reference, reference_interval = loop_count_series(reference_rows)
    if interval != reference_interval:
        raise InputError('loop intervals differ: {0} s and {1} s'.format(interval, reference_interval))
    return compare_count_series(counts, reference, interval)


def _travel_time_series(frame, time_column):
    return pd.Series(
        frame['travel_time'].astype(float).values,
        index=pd.to_datetime(frame[time_column].astype(float), unit='s'),
    ).sort_index()


def travel_time_profile_correlations(fcd_rows, segment_rows, lengths, interval):
    """
    Correlation of the floating-car and the segment probe travel time profiles of every probed segment.

    Both sources are binned into `interval` seconds and normalized with
    `normalized_travel_time_profile`.  A segment without floating-car
    passages, or whose profiles share fewer than two bins, has no correlation.

    Returns:
        {road_id: TravelTimeProfileComparison}
    """
    freq = pd.offsets.Second(interval)
    fcd = fcd_segment_travel_times(fcd_rows, lengths, interval)
    probes = pd.DataFrame(list(segment_rows), columns=ingest.SEGMENT.row_class._fields)
    probes = probes.dropna(subset=['travel_time'])
    comparisons = {}
    for road_id in sorted(set(probes['road_id'])):
        probe_series = _travel_time_series(probes[probes['road_id'] == road_id], 'from_time')
        fcd_series = _travel_time_series(fcd[fcd['road_id'] == road_id], 'interval_start')
        correlation = None
        if len(fcd_series):
            try:
                correlation = profile_correlation(
                    normalized_travel_time_profile(fcd_series, freq),
                    normalized_travel_time_profile(probe_series, freq),
                )
            except InputError as exc:
                log.warning('No travel time profile correlation for %s: %s', road_id, exc)
        if correlation is not None and math.isnan(correlation):
            correlation = None
        comparisons[road_id] = TravelTimeProfileComparison(correlation, len(fcd_series), len(probe_series))
    return comparisons


def zone_lookup(zones):
    """Map every node touching a zone to that zone; a node touching several maps to the first ID."""
    zone_of = {}
    for zone in sorted(zones, key=lambda item: item.zone_id, reverse=True):
        nodes = set(zone.interior_nodes)
        for upstream, downstream in zone.boundary_segments:
            nodes.update((upstream, downstream))
        for node_id in nodes:
            zone_of[node_id] = zone.zone_id
    return zone_of


def traveler_activities(trips, net, zone_of=None):
    """
    Per-traveler TravelerTrips from built trips.

    Trip endpoints outside `zone_of` are their own singleton zones.
    """
    zone_of = zone_of or {}
    activities = defaultdict(list)
    for trip in trips:
        path = trip.node_path
        activities[trip.vehicle_id].append(TravelerTrip(
            departure=trip.start_time,
            origin_zone=zone_of.get(path[0], path[0]),
            destination_zone=zone_of.get(path[-1], path[-1]),
            distance_km=net.path_length(path) / 1000.0,
        ))
    return dict(activities)


def traveler_profiles(trip_rows, net, zones=(), commercial_ids=(), thresholds=DEFAULT_THRESHOLDS):
    """Profiles and class shares of the travelers behind a trip table."""
    trips = tripbuild.trips_from_rows(trip_rows, net)
    activities = traveler_activities(trips, net, zone_lookup(zones))
    log.info('Profiling %d travelers from %d trips', len(activities), len(trips))
    return concentration_and_classes(activities, commercial_ids, thresholds)


def profiles_to_frame(profiles):
    return pd.DataFrame(list(profiles), columns=TravelerProfile._fields)


class TravelerProfilesTask(netmodel.RoadNetworkMixin, OverwriteOutputMixin, luigi.Task):
    """
    Writes `profiles.csv` and `shares.yaml` from a trip table.

    Parameters:
        trips: the trip table; defaults to `trips.csv` in the data directory.
        zones_file: optional zones YAML as written by ExtractFsrnTask.
        commercial_file: optional list of commercial vehicle IDs, one per line.
    """

    output_root = luigi.Parameter()
    trips = luigi.Parameter(default=None)
    zones_file = luigi.Parameter(default=None)
    commercial_file = luigi.Parameter(default=None)

    def requires(self):
        requirements = self.network_requirements()
        requirements['trips'] = ExternalURL(self.trips or url_path_join(self.data_dir, 'trips.csv'))
        if self.zones_file:
            requirements['zones'] = ExternalURL(self.zones_file)
        if self.commercial_file:
            requirements['commercial'] = UncheckedExternalURL(self.commercial_file)
        return requirements

    def output(self):
        return {
            'profiles': get_target_from_url(url_path_join(self.output_root, 'profiles.csv')),
            'shares': get_target_from_url(url_path_join(self.output_root, 'shares.yaml')),
        }

    def run(self):
        self.remove_output_on_overwrite()
        inputs = self.input()
        net = self.read_network(inputs)
        zones = []
        if 'zones' in inputs:
            with inputs['zones'].open('r') as zone_file:
                zones = netmodel.zones_from_yaml(zone_file)
        commercial_ids = set()
        if 'commercial' in inputs and inputs['commercial'].exists():
            with inputs['commercial'].open('r') as commercial_input:
                commercial_ids = set(line.strip() for line in commercial_input if line.strip())
        with inputs['trips'].open('r') as trip_file:
            trip_rows = ingest.read_table(ingest.TRIP, trip_file)
        profiles, shares = traveler_profiles(trip_rows, net, zones, commercial_ids, ClassThresholds.from_config())

        outputs = self.output()
        with outputs['profiles'].open('w') as output_file:
            profiles_to_frame(profiles).to_csv(output_file, index=False)
        with outputs['shares'].open('w') as output_file:
            yaml.safe_dump(shares, output_file, default_flow_style=False)


class LorenzCurveTask(OverwriteOutputMixin, luigi.Task):
    """Writes `lorenz.csv` from a profiles file with a `distance_km` column."""

    profiles_file = luigi.Parameter()
    output_root = luigi.Parameter()

    def requires(self):
        return ExternalURL(self.profiles_file)

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'lorenz.csv'))

    def run(self):
        self.remove_output_on_overwrite()
        with self.input().open('r') as profiles_input:
            distances = pd.read_csv(profiles_input)['distance_km']
        curve = lorenz_curve(distances.tolist())
        log.info('Top 1%% of %d travelers cover %.1f%% of the distance', len(distances), 100 * curve.top_share)
        with self.output().open('w') as output_file:
            pd.DataFrame({
                'population_share': curve.population_share,
                'distance_share': curve.distance_share,
            }).to_csv(output_file, index=False, float_format='%.6f')


class FundamentalDiagramTask(OverwriteOutputMixin, luigi.Task):
    """
    Writes `fundamental_diagram.yaml`, the speed-density fit over loop files.

    Parameters:
        loop_files: loop measurement files, all on segments with `lane_count` lanes.
    """

    loop_files = luigi.ListParameter()
    output_root = luigi.Parameter()
    lane_count = luigi.IntParameter(default=1)
    alpha = luigi.FloatParameter(default=1.0, config_path={'section': 'stream-params', 'name': 'alpha'})
    beta = luigi.FloatParameter(default=0.05, config_path={'section': 'stream-params', 'name': 'beta'})

    def requires(self):
        return [ExternalURL(url) for url in self.loop_files]

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'fundamental_diagram.yaml'))

    def run(self):
        self.remove_output_on_overwrite()
        samples = []
        for target in self.input():
            with target.open('r') as loop_file:
                samples.extend(loop_rows_to_samples(ingest.read_table(ingest.LOOP, loop_file), self.lane_count))
        fit = fit_fundamental_diagram(samples, self.alpha, self.beta)
        with self.output().open('w') as output_file:
            yaml.safe_dump(dict(fit._asdict(), samples=len(samples)), output_file, default_flow_style=False)


class FlowConsistencyTask(OverwriteOutputMixin, luigi.Task):
    """
    Writes `flow_consistency.yaml`, the count agreement of a loop file with a reference loop file.

    The reference is typically a field loop on the same line as a virtual one.
    """

    loop_file = luigi.Parameter()
    reference_file = luigi.Parameter()
    output_root = luigi.Parameter()

    def requires(self):
        return {'loop': ExternalURL(self.loop_file), 'reference': ExternalURL(self.reference_file)}

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'flow_consistency.yaml'))

    def run(self):
        self.remove_output_on_overwrite()
        inputs = self.input()
        with inputs['loop'].open('r') as loop_file:
            rows = ingest.read_table(ingest.LOOP, loop_file)
        with inputs['reference'].open('r') as reference_file:
            reference_rows = ingest.read_table(ingest.LOOP, reference_file)
        comparison = flow_consistency(rows, reference_rows)
        log.info('Counts agree with r = %.3f over %d intervals', comparison.correlation, comparison.samples)
        with self.output().open('w') as output_file:
            yaml.safe_dump({
                'correlation': comparison.correlation,
                'rmse_veh_per_min': comparison.rmse,
                'samples': comparison.samples,
            }, output_file, default_flow_style=False)


class TravelTimeProfileTask(netmodel.RoadNetworkMixin, OverwriteOutputMixin, luigi.Task):
    """
    Writes `travel_time_profiles.yaml`, comparing floating-car travel times with segment probes.

    Parameters:
        fcd_file: floating-car samples.
        segment_files: segment probe files.
        interval: bin width of both travel time series, in seconds.
    """

    fcd_file = luigi.Parameter()
    segment_files = luigi.ListParameter()
    output_root = luigi.Parameter()
    interval = luigi.IntParameter(default=900)

    def requires(self):
        requirements = self.network_requirements()
        requirements['fcd'] = ExternalURL(self.fcd_file)
        requirements['segments'] = [ExternalURL(url) for url in self.segment_files]
        return requirements

    def output(self):
        return get_target_from_url(url_path_join(self.output_root, 'travel_time_profiles.yaml'))

    def run(self):
        self.remove_output_on_overwrite()
        inputs = self.input()
        net = self.read_network(inputs)
        with inputs['fcd'].open('r') as fcd_file:
            fcd_rows = ingest.read_table(ingest.FCD, fcd_file)
        segment_rows = []
        for target in inputs['segments']:
            with target.open('r') as segment_file:
                segment_rows.extend(ingest.read_table(ingest.SEGMENT, segment_file))
        lengths = dict((ingest.make_road_id(segment.upstream, segment.downstream), segment.length)
                       for segment in net.segments())
        comparisons = travel_time_profile_correlations(fcd_rows, segment_rows, lengths, self.interval)
        with self.output().open('w') as output_file:
            yaml.safe_dump(
                dict((road_id, dict(comparison._asdict())) for road_id, comparison in comparisons.items()),
                output_file, default_flow_style=False,
            )
