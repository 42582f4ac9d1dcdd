#pragma once

#include "dfmix/cells.hpp"
#include "dfmix/common.hpp"
#include "dfmix/corpus.hpp"
#include "dfmix/eval.hpp"
#include "dfmix/mixing.hpp"
#include "dfmix/model.hpp"
#include "dfmix/stats.hpp"
