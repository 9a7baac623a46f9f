# Importing the simulator (rather than running it as a script) lets Python
# reuse its cached bytecode, which matters when a server is spawned per call.
import sys

import sim_server

sys.exit(sim_server.main())
