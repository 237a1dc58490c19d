#pragma once

// Everything except the HTTP adapters (stepviz/remote.hpp).

#include "stepviz/attention.hpp"
#include "stepviz/backend.hpp"
#include "stepviz/chat.hpp"
#include "stepviz/config.hpp"
#include "stepviz/dataset.hpp"
#include "stepviz/digest.hpp"
#include "stepviz/error.hpp"
#include "stepviz/image.hpp"
#include "stepviz/judge.hpp"
#include "stepviz/latent_io.hpp"
#include "stepviz/masks.hpp"
#include "stepviz/metrics.hpp"
#include "stepviz/parallel.hpp"
#include "stepviz/pipeline.hpp"
#include "stepviz/plan.hpp"
#include "stepviz/recaption.hpp"
#include "stepviz/schedule.hpp"
#include "stepviz/similarity.hpp"
#include "stepviz/toy_backend.hpp"
