import os

from wealthfactory import prepare_dataset, train_final, infer_places, render_scatter, SearchSpec, setup_logging
from wealthfactory.synthkit import SynthSpec, transfer_pair, bayes_nrmse
from wealthfactory.evalreport import transfer, write_table


def main():
    spec = SynthSpec(n_clusters=800, n_places=1200, target_nrmse_mu=0.4, seed=42)
    # B shares A's wealth process, restricted to the central 80% of A's noise-free wealth
    (bundle_A, record_A), (bundle_B, record_B) = transfer_pair(spec, band=(0.1, 0.9), target_nrmse_mu=0.2)

    search = SearchSpec.profile('ci', seed=42)
    models, tests = [], []
    for bundle, record in [(bundle_A, record_A), (bundle_B, record_B)]:
        dataset = prepare_dataset(bundle, relocation_mode='rc')
        card, model, predictions = train_final(None, recency='ON', weights='ens', spec=search, dataset=dataset)
        print('{}: trained {}, best achievable {}'.format(bundle.country_code, card.mean_metrics, bayes_nrmse(record, stats=dataset.stats)))
        tests.append((dataset.features.loc(predictions['cluster_id'].tolist()), predictions[['mu', 'sigma']].to_numpy()))
        models.append(model)

    result = transfer(models[0], models[1], tests[0], tests[1], countries=(bundle_A.country_code, bundle_B.country_code))
    base_dir = '_synthetic'
    write_table(result.to_frame(), os.path.join(base_dir, 'transfer.csv'))

    poverty_map = infer_places(models[0], bundle_A)
    poverty_map.write_geojson(os.path.join(base_dir, 'poverty_map.geojson'))
    render_scatter(poverty_map, filename=os.path.join(base_dir, 'scatter.svg'))


if __name__ == '__main__':

    setup_logging()
    main()
