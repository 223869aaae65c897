#pragma once

#include "ensdens/ensemble_weights.hpp"
#include "ensdens/error.hpp"
#include "ensdens/evaluation.hpp"
#include "ensdens/experiment.hpp"
#include "ensdens/gmm_fit.hpp"
#include "ensdens/io.hpp"
#include "ensdens/mixture.hpp"
#include "ensdens/modal_em.hpp"
#include "ensdens/parallel.hpp"
#include "ensdens/partition.hpp"
#include "ensdens/rng.hpp"
#include "ensdens/scenarios.hpp"
