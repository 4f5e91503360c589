import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cagcn.cir import CirConfig, compute_cir
from cagcn.datasets import community_interactions, split_per_user
from cagcn.estimator import CAGCNRecommender, CommonInteractedRatio
from cagcn.validation import check_embeddings, check_ids, check_interactions


@pytest.fixture(scope="module")
def split():
    return split_per_user(community_interactions(40, 50, mean_degree=10, min_degree=5, communities=3, seed=4), 0.2, 4)


@pytest.fixture(scope="module")
def fitted(split):
    return CAGCNRecommender(epochs=3, batch_size=64, n_recommendations=5, random_state=1).fit(split.train)


def test_params_round_trip():
    est = CAGCNRecommender(gamma=0.5, metric="sc")
    params = est.get_params()
    assert params["gamma"] == 0.5 and params["metric"] == "sc"
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(layers=2)
    assert twin.layers == 2 and est.layers == 3


def test_cir_transformer_matches_function(split):
    est = CommonInteractedRatio(metric="lhn")
    out = est.fit_transform(split.train)
    expected = compute_cir(split.train, CirConfig(metric="lhn")).weights
    assert (out != expected).nnz == 0
    dense = split.train.user_adj.toarray()
    assert (est.transform(dense) != expected).nnz == 0


def test_input_forms_agree(split):
    g = split.train
    users, items = g.edges()
    pairs = np.column_stack([users, items])
    for X in (g, g.user_adj, g.user_adj.toarray()):
        got = check_interactions(X, g.num_users, g.num_items)
        assert (got.user_adj != g.user_adj).nnz == 0
    from_pairs = check_interactions(pairs, g.num_users, g.num_items)
    assert (from_pairs.user_adj != g.user_adj).nnz == 0
    with pytest.raises(ValueError):
        check_interactions(sp.csr_matrix((3, 4)), 5, 4)
    with pytest.raises(ValueError):
        check_interactions(np.array([[0, -1]]))


def test_check_ids():
    assert check_ids([0, 2], 3).tolist() == [0, 2]
    with pytest.raises(IndexError):
        check_ids([3], 3)
    with pytest.raises(ValueError):
        check_ids([0.5], 3)
    with pytest.raises(ValueError):
        check_embeddings(np.zeros((2, 3)), 4)


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        CAGCNRecommender().predict([0])


def test_fitted_attributes(fitted, split):
    n, m = split.num_users, split.num_items
    assert fitted.embeddings_.shape == (n + m, 64)
    assert fitted.representations_.shape == (n + m, 64)
    assert len(fitted.loss_curve_) == 3


def test_predict_excludes_seen_and_orders(fitted, split):
    users = np.arange(split.num_users)
    recs = fitted.predict(users)
    assert recs.shape == (users.size, 5)
    for u in users:
        assert not set(recs[u].tolist()) & set(split.train.user_neighbors(u).tolist())
        scores = fitted.decision_function(np.full(5, u), recs[u])
        assert np.all(np.diff(scores) <= 0)


def test_transform_over_training_graph_reproduces_fit(fitted, split):
    assert np.allclose(fitted.transform(split.train), fitted.representations_, atol=1e-12)


def test_score_is_recall(fitted, split):
    value = fitted.score(split.test_graph())
    assert 0.0 <= value <= 1.0


def test_decision_function_shape_check(fitted):
    with pytest.raises(ValueError):
        fitted.decision_function([0, 1], [0])
