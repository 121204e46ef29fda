from sdvsim.cli import main

raise SystemExit(main())
