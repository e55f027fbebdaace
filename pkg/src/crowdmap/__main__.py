from crowdmap.cli import main

main()
