#pragma once

#include "wegnerflow/bogoliubov.hpp"
#include "wegnerflow/core.hpp"
#include "wegnerflow/dopri5.hpp"
#include "wegnerflow/flow.hpp"
#include "wegnerflow/fock.hpp"
#include "wegnerflow/io.hpp"
